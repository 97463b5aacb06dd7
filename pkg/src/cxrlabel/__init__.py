"""Chinese chest X-ray report labeling and dataset-construction toolkit."""

__version__ = "0.1.0"
