"""From-scratch trainable baselines sharing a train/predict contract."""

from __future__ import annotations
