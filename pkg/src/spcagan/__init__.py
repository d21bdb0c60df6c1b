"""spcagan: subspace-regularized GAN augmentation and anomaly detection for activity logs.

Subpackages
-----------
loggen       synthetic activity-log corpora and CERT-style CSV parsing
features     per-user-per-day behavior features, selection, standardization
linmetrics   PCA, subspace similarity, silhouette, similarity score, KDE
augment      classical oversamplers (ROS, SMOTE, GMM, noise jitter)
gan          conditional GANs (CGAN, ACGAN, CWGAN-GP, SPCAGAN)
detect       MLP / 1D-CNN / BNN / ensemble / hybrid detectors and metrics
adversarial  FGSM and DeepFool attacks plus the robustness protocol
cli          experiment orchestration and command-line entry points
"""

__version__ = "0.1.0"
