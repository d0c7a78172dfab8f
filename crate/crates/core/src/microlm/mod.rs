//! Desk-scale decoder-only language model with LoRA adapters.

pub mod backward;
pub mod config;
pub mod corpus;
pub mod forward;
pub mod gradcheck;
pub mod io;
pub mod lora;
pub mod score;
pub mod tokenizer;
pub mod train;
pub mod weights;

pub use backward::{batch_gradients, batch_loss, example_loss, BatchGradients, Example};
pub use config::{MicroLmConfig, Precision};
pub use forward::{forward, ForwardOutput};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use lora::{merge_adapter, LoraAdapter, LoraConfig, LoraPair, Projection};
pub use tokenizer::Tokenizer;
pub use weights::MicroLmWeights;
pub use score::{
    interpretation_example, interpretation_prompt, is_ambiguous, predicted_label, score_tokens, top_features,
    two_way_softmax, InterpretedAnswer, MicroLm, ScoreOutput, AMBIGUITY_BAND,
};
pub use train::{finetune_lora, mean_loss, pretrain, FinetuneOutcome, PretrainOutcome, TrainingHyper};
pub use corpus::{interpretation_examples, record_examples, AFFIRMATIVE_REPLIES, NEGATIVE_REPLIES};
