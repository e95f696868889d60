# Empty file to mark correlations as a package
