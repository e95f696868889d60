# Empty file to mark utils as a package

