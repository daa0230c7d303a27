"""Masked-autoencoder pipeline for multichannel sleep signals.

Library layout:
    data        recordings, epochs, labels, normalization, splits
    synth       deterministic synthetic corpus for desk-scale runs
    edf         EDF ingestion onto the canonical channel grid
    container   PSGT signal files and PSGC model checkpoints
    model       the masked autoencoder and embedding extraction
    pretrain    the self-supervised training loop
    metrics     F1/AUROC/confusion, Pearson, Welch, silhouette, DTW, MSE
    probe       frozen-embedding linear probes
    analysis    cohort silhouette CIs and distance correlation
    generate    full decoding, latent averaging, retrieval, outliers
    impute      whole-channel imputation and its evaluation
    cli         the `pedsleep` command
"""

__version__ = "0.1.0"
