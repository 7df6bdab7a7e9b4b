//! Bitmap sparse format: byte-block masks, a 256-entry decode table, the
//! compact value array and the on-disk container.

mod bitmap;
mod container;

pub use bitmap::{build_lut, decode, decode_block, encode, popcount8, BitmapSparseMatrix, DecodeLut, ValueDtype, LUT};
pub use container::{
    compression_ratio, container_from_bytes, container_to_bytes, ratio_from_counts, read_container, write_container,
    ContainerLayout, BASE_HEADER_LEN, CONTAINER_MAGIC, CONTAINER_VERSION,
};
