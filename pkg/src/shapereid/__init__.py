"""Shape-centered visible-infrared person re-identification at desk scale.

Subpackages cover the full pipeline: synthetic paired-modality data
(`synth`), dataset plumbing (`manifest`, `sampler`, `augment`), the model
(`backbone`, `attention`, `network`), objectives (`losses`), training
(`trainer`), retrieval evaluation (`evaluator`), sweeps (`ablation`),
cost accounting (`complexity`), and the CLI (`cli`).
"""

__version__ = "0.1.0"
