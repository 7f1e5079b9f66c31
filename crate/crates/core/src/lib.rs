pub mod backend;
pub mod engine;
pub mod harness;
pub mod scoring;
pub mod segmenter;
pub mod tokenizer;
pub mod toy;
