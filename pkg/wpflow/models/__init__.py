# Empty file to mark models as a package

