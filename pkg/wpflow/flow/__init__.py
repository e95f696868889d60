# Empty file to mark flow as a package
