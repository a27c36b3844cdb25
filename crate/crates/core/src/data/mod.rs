//! Feature ingestion, framing, normalization, speaker-disjoint splits and
//! the synthetic corpus.

mod framing;
mod io;
mod normalize;
mod preprocess;
mod split;
mod synth;
mod track;

pub use framing::{frame_features, fuse_modalities, unfuse, FeatureImage, FramingConfig};
pub use io::{
    load_features_csv, load_labels_csv, load_manifest, load_recording, read_manifest, write_features_csv,
    write_labels_csv, write_manifest, ManifestEntry, Recording,
};
pub use normalize::NormStats;
pub use preprocess::{fused_track, Preprocessing};
pub use split::{split_sessions, RecordingInfo, SessionSplit};
pub use synth::{
    generate_synthetic, recording_seed, synthetic_corpus, Difficulty, SyntheticRecording, BODY_DIM,
    MIN_SYNTHETIC_FRAMES, SPEECH_DIM, SYNTHETIC_FRAME_RATE_HZ,
};
pub use track::{average_annotators, compute_deltas, FeatureTrack, LabelTrack, Modality};
