# This makes pathx a package
__version__ = "1.0.0"
