# Empty file to mark measure as a package
