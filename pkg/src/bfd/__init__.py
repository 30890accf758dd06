"""bfd: a workspace manager with built-in archive, build targets, test reports and CI."""

__version__ = "0.1.0"
