"""mfseg: mental-foramen segmentation toolkit for panoramic radiographs.

Provides dual-shape ground-truth mask synthesis, a NumPy encoder-decoder
architecture zoo, Dice-family losses with DSC/IoU/ROC evaluation, a
5-fold cross-validation training harness, and a synthetic radiograph
generator for fully reproducible desk-scale experiments.
"""

__version__ = "0.1.0"
