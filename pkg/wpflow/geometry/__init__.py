# Empty file to mark geometry as a package
