"""Numpy neural networks with hand-written gradients: a depth-image ViT
autoencoder and a stacked GRU correction network."""
