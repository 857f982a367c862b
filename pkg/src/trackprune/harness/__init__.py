"""I/O side of the package: configs, fixtures, reports, CLI."""
