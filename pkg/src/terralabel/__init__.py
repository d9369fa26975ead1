"""terralabel: unsupervised segment-graph embeddings and interactive labelling
for multi-band raster tiles.

Pipeline stages: fuzzy C-means soft targets -> U-Net activation maps -> SLIC
superpixels -> segment graphs -> GNN embeddings -> Hungarian chip matching ->
UMAP 2D projections -> HTTP labelling service.
"""

__version__ = "0.1.0"
