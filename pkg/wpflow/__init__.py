# Empty file to mark wpflow as a package

__version__ = "0.1.0"
