"""Semi-supervised multi-task transformer network for thyroid-nodule segmentation."""

__version__ = "0.1.0"
