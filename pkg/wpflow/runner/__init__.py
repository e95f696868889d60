# Empty file to mark runner as a package
