"""Management-zone pipeline built on nitrogen response curves.

Stages: raster ingestion or synthesis (field), patch-level yield regression
(surrogate), nitrogen sweeps into per-site response curves (response), curve
shape scores (fpca), fuzzy c-means zoning (zones), and counterfactual zone
explanations (cfe). The cli module chains them into one reproducible run.
"""

__version__ = "0.1.0"
