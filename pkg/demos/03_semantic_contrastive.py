"""Semantic contrastive coding on the unit hypersphere.

The projection head maps backbone features to unit vectors; the InfoNCE
loss pulls each anchor (original image) toward its positive (the
channel-corrupted reconstruction) and away from the other originals.
"""

import math

import torch

from semcom import ProjectionHead, new_backbone, extract_features, semantic_contrastive_loss

torch.manual_seed(0)

# In a fully symmetric batch every similarity cancels and the loss is
# exactly log(B-1), independent of the temperature.
for b in (2, 4, 8):
    e = torch.ones(b, 32) / math.sqrt(32)
    loss = semantic_contrastive_loss(e, e.clone(), tau=0.1)
    print(f"symmetric batch B={b}: loss {float(loss):.6f}  log(B-1) = {math.log(b - 1):.6f}")

# Pulling positives toward their anchors strictly lowers the loss.
anchors = torch.randn(6, 32)
anchors = anchors / anchors.norm(dim=1, keepdim=True)
noise_dir = torch.randn(6, 32)
print("\nper-anchor alignment sweep (tau = 0.1):")
for blend in (1.0, 0.5, 0.25, 0.0):
    positives = anchors + blend * noise_dir
    positives = positives / positives.norm(dim=1, keepdim=True)
    cos = float((anchors * positives).sum(1).mean())
    loss = float(semantic_contrastive_loss(anchors, positives, tau=0.1))
    print(f"  mean cos(anchor, positive) {cos:+.3f} -> loss {loss:8.4f}")

# The projection head turns feature maps into hypersphere points.
bundle = new_backbone(blocks_per_stage=2, seed=1)
projection = ProjectionHead(bundle.feature_channels, out_dim=32)
x = torch.rand(4, 3, 32, 32)
z = projection(extract_features(bundle, x))
print(f"\nprojected embeddings: shape {tuple(z.shape)}, norms {z.norm(dim=1).tolist()}")
