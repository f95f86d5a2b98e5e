"""Image IO, preprocessing, augmentation, splitting and synthetic corpora."""
from .dataset import (
    SPLIT_RATIOS,
    DatasetSplit,
    Sample,
    augment_sample,
    class_names_for,
    list_folder,
    load_folder,
    split_dataset,
    stratified_counts,
    synth_dataset,
    write_folder,
)
from .io import load_image, save_image
from .transforms import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    AugmentConfig,
    augment,
    augment_rng,
    denormalize,
    hflip,
    normalize,
    resize_bilinear,
    rotate,
    vflip,
)
