# Empty file to mark config as a package

