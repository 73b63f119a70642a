"""thbench: a benchmark toolkit for talking-head video generation.

Evaluates generated talking-head videos along four axes: identity
preservation (cosine similarity of face embeddings), visual quality
(SSIM / PSNR / CPBD / Frechet feature distance), semantic lip
synchronization (lipreading-feature distance), and natural-spontaneous
motion (emotion and blink feature similarity). Includes the shared
preprocessing protocol (landmark smoothing, face tracking and cropping,
head-pose estimation) and a reporting layer that conditions every metric
on head pose and head motion.
"""

__version__ = "0.1.0"
