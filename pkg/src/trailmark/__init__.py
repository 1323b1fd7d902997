"""Self-supervised traversability labels from drive logs, and a
masked-reconstruction model that turns novelty into a per-pixel risk map."""

__version__ = "0.1.0"
