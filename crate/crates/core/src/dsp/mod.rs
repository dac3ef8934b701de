//! Audio ingestion and MFCC feature extraction.

mod cache;
mod mfcc;
mod wav;

pub use cache::{read_feature_cache, write_feature_cache, CACHE_MAGIC, CACHE_VERSION};
pub use mfcc::{
    compute_mfcc, hz_to_mel, mean_variance_normalize, mel_to_hz, MfccConfig, MfccExtractor,
    MfccMatrix, WindowKind,
};
pub use wav::{load_wav, resample_linear, write_wav, AudioClip};
