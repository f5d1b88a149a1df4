//! Acoustic front end: WAV ingestion, STFT, log-mel and the hand-crafted
//! feature families.

mod cache;
mod features;
mod mel;
mod standardize;
mod stft;
mod wav;

pub use cache::{feature_cache_bytes, load_feature_cache, parse_feature_cache, save_feature_cache, CACHE_MAGIC, CACHE_VERSION};
pub use features::{
    chroma_cens, chroma_stft, concat_features, contrast_band_edges, dct_ii, extract_feature, extract_features, mfcc, parse_kinds,
    pitch_class, raw_frames, rmse, spectral_centroid, spectral_contrast, tonnetz, tonnetz_basis, FeatureKind, FeatureSequence, MEL_BANDS,
    MFCC_COEFFICIENTS,
};
pub use mel::{hz_to_mel, logmel_spectrogram, mel_energies, mel_filterbank, mel_to_hz, LOG_FLOOR};
pub use standardize::Standardizer;
pub use stft::{frame_count, hann, stft, Spectrogram, DEFAULT_HOP, DEFAULT_WINDOW};
pub use wav::{load_wav, parse_wav, scale_waveform, wav_pcm16_bytes, write_wav_pcm16, Waveform};
