from .augment import AugmentConfig, affine_transform, augment, hflip
from .dataset import (
    Batch,
    DatasetError,
    LabeledDataset,
    Sample,
    SplitIndices,
    batches,
    load_dataset,
    one_hot,
    prefetch,
    read_manifest,
    split,
    split_indices,
    split_sizes,
    write_manifest,
)
from .io import ImageFormatError, is_image_file, load_image, save_ppm
from .resize import normalize, preprocess, resize_area
from .synthetic import make_synthetic, write_synthetic
