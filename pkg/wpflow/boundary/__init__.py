# Empty file to mark boundary as a package
