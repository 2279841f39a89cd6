use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("{family}: missing parameter `{param}`")]
    MissingParam { family: &'static str, param: &'static str },
    #[error("{family}: unexpected parameter `{param}`")]
    UnexpectedParam { family: &'static str, param: String },
    #[error("{family}: parameter `{param}` = {value} outside its domain ({domain})")]
    ParamDomain {
        family: &'static str,
        param: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("probability {0} outside (0, 1)")]
    ProbabilityDomain(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizeError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("decimals {0} outside [0, 6]")]
    Decimals(u32),
    #[error("max_bins {0} must be at least 2")]
    MaxBins(usize),
    #[error("degenerate target: quantile interval [{lower}, {upper}] holds no grid point")]
    Degenerate { lower: f64, upper: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VocabError {
    #[error("no token for character {0:?}")]
    UnknownChar(char),
    #[error("no token for family `{0}`")]
    UnknownFamily(String),
    #[error("no token for parameter `{0}`")]
    UnknownParam(String),
    #[error("token id {0} out of range")]
    UnknownId(u32),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrieError {
    #[error("prefix {0:?} is not a path in the trie")]
    Path(Vec<u32>),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds context length {context}")]
    Context { len: usize, context: usize },
    #[error("token id {0} outside vocabulary")]
    Token(u32),
    #[error("non-finite gradient at parameter {0}")]
    Diverged(usize),
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}
