"""Turn heatmaps and embeddings back into named data series."""
