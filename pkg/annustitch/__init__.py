"""AnnuStitch: unwrap, enhance and stitch tubular endoscopy frames."""

__version__ = "0.1.0"
