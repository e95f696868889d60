# Empty file to mark observability as a package
