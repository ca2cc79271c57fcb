use rand::Rng;
use rand_distr::StandardNormal;

use super::{rng, HarnessError};
use crate::numerics::RealMatrix;
use crate::state_io::{HiddenStateTensor, ReadoutHead, ReadoutKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Positive,
    Negative,
    Neutral,
}

/// Token ids `0..positive` are positive, the next `negative` ids negative,
/// and the remaining `neutral` ids neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    pub positive: usize,
    pub negative: usize,
    pub neutral: usize,
}

impl Default for Vocab {
    fn default() -> Self {
        Self {
            positive: 5,
            negative: 5,
            neutral: 10,
        }
    }
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.positive + self.negative + self.neutral
    }

    pub fn class_of(&self, token: usize) -> Option<TokenClass> {
        if token < self.positive {
            Some(TokenClass::Positive)
        } else if token < self.positive + self.negative {
            Some(TokenClass::Negative)
        } else if token < self.size() {
            Some(TokenClass::Neutral)
        } else {
            None
        }
    }

    /// The `i`-th token of a class.
    pub fn token(&self, class: TokenClass, i: usize) -> usize {
        match class {
            TokenClass::Positive => i % self.positive,
            TokenClass::Negative => self.positive + i % self.negative,
            TokenClass::Neutral => self.positive + self.negative + i % self.neutral,
        }
    }
}

/// `h_{t+1} = diag(1, decay, …, decay) h_t + W_in x_t` with one-hot `x_t`.
/// Coordinate 0 integrates sentiment tokens exactly; neutral tokens push
/// small vectors into the decaying coordinates.
#[derive(Debug, Clone)]
pub struct CounterRnn {
    decay: f64,
    w_in: RealMatrix,
    vocab: Vocab,
    readout: ReadoutHead,
}

/// Neutral input vectors have norms in this range.
const NEUTRAL_NORM: (f64, f64) = (0.02, 0.099);

pub fn build_counter_rnn(k: usize, decay: f64, vocab: Vocab, seed: u64) -> Result<CounterRnn, HarnessError> {
    if k < 2 {
        return Err(HarnessError::Parameter(format!("hidden size must be at least 2, got {k}")));
    }
    if !(decay > 0.0 && decay < 1.0) {
        return Err(HarnessError::Parameter(format!("decay must lie in (0, 1), got {decay}")));
    }
    if vocab.positive == 0 || vocab.negative == 0 || vocab.neutral == 0 {
        return Err(HarnessError::Parameter("every vocabulary class needs at least one token".into()));
    }
    let mut r = rng(seed);
    let mut w_in = RealMatrix::zeros(k, vocab.size());
    for token in 0..vocab.size() {
        match vocab.class_of(token).expect("token in range") {
            TokenClass::Positive => w_in[(0, token)] = 1.0,
            TokenClass::Negative => w_in[(0, token)] = -1.0,
            TokenClass::Neutral => {
                let dir: Vec<f64> = (1..k).map(|_| r.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|x: &f64| x * x).sum::<f64>().sqrt().max(1e-12);
                let size = r.random_range(NEUTRAL_NORM.0..NEUTRAL_NORM.1);
                for (i, d) in dir.iter().enumerate() {
                    w_in[(i + 1, token)] = size * d / norm;
                }
            }
        }
    }
    let mut weights = RealMatrix::zeros(k, 1);
    weights[(0, 0)] = 1.0;
    let readout = ReadoutHead::new(weights, vec![0.0], ReadoutKind::SigmoidBinary)?;
    Ok(CounterRnn {
        decay,
        w_in,
        vocab,
        readout,
    })
}

impl CounterRnn {
    pub fn hidden_dim(&self) -> usize {
        self.w_in.rows()
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn input_weights(&self) -> &RealMatrix {
        &self.w_in
    }

    pub fn readout(&self) -> &ReadoutHead {
        &self.readout
    }

    /// Recorded states `h_1..h_n` for each token stream, starting from `h_0 = 0`.
    pub fn run(&self, streams: &[Vec<usize>]) -> Result<HiddenStateTensor, HarnessError> {
        let k = self.hidden_dim();
        let n = streams.first().map_or(0, Vec::len);
        if streams.iter().any(|s| s.len() != n) {
            return Err(HarnessError::Dimension("token streams differ in length".into()));
        }
        let mut data = Vec::with_capacity(streams.len() * n * k);
        for stream in streams {
            let mut h = vec![0.0; k];
            for &token in stream {
                if token >= self.vocab.size() {
                    return Err(HarnessError::Parameter(format!("token {token} is outside the vocabulary")));
                }
                for (i, v) in h.iter_mut().enumerate() {
                    let carry = if i == 0 { 1.0 } else { self.decay };
                    *v = carry * *v + self.w_in[(i, token)];
                }
                data.extend_from_slice(&h);
            }
        }
        Ok(HiddenStateTensor::new(streams.len(), n, k, data)?)
    }

    /// Readout category of each sample's final valid state.
    pub fn final_labels(&self, states: &HiddenStateTensor) -> Result<Vec<usize>, HarnessError> {
        let mut rows = Vec::new();
        for s in 0..states.samples() {
            let len = states.valid_len(s);
            if len == 0 {
                return Err(HarnessError::Parameter(format!("sample {s} has no valid steps")));
            }
            rows.extend_from_slice(states.state(s, len - 1));
        }
        let m = RealMatrix::new(states.samples(), states.hidden_dim(), rows)?;
        Ok(self.readout.apply(&m)?.1)
    }
}

/// How token streams are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamConfig {
    /// Chance that a step carries a sentiment token.
    pub p_sentiment: f64,
    /// Chance that a sentiment token agrees with the stream's class.
    pub class_bias: f64,
    /// When set, exactly the first this-many steps carry sentiment tokens
    /// and the rest are neutral.
    pub evidence_steps: Option<usize>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            p_sentiment: 0.5,
            class_bias: 0.9,
            evidence_steps: None,
        }
    }
}

/// `s` streams of `n` tokens. Each stream picks a hidden class with equal
/// odds and leans its sentiment tokens towards it.
pub fn gen_token_streams(
    vocab: Vocab,
    s: usize,
    n: usize,
    config: StreamConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>, HarnessError> {
    for (name, p) in [("p_sentiment", config.p_sentiment), ("class_bias", config.class_bias)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(HarnessError::Parameter(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    if n == 0 {
        return Err(HarnessError::Parameter("streams need at least one token".into()));
    }
    let mut r = rng(seed);
    let streams = (0..s)
        .map(|_| {
            let positive_class = r.random_bool(0.5);
            (0..n)
                .map(|t| {
                    let sentiment = match config.evidence_steps {
                        Some(e) => t < e,
                        None => r.random_bool(config.p_sentiment),
                    };
                    if sentiment {
                        let agrees = r.random_bool(config.class_bias);
                        let class = if agrees == positive_class {
                            TokenClass::Positive
                        } else {
                            TokenClass::Negative
                        };
                        let count = if class == TokenClass::Positive { vocab.positive } else { vocab.negative };
                        vocab.token(class, r.random_range(0..count))
                    } else {
                        vocab.token(TokenClass::Neutral, r.random_range(0..vocab.neutral))
                    }
                })
                .collect()
        })
        .collect();
    Ok(streams)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rnn() -> CounterRnn {
        build_counter_rnn(6, 0.5, Vocab::default(), 1).unwrap()
    }

    #[test]
    fn integrates_sentiment() {
        let net = rnn();
        let v = net.vocab();
        let stream = vec![v.token(TokenClass::Positive, 0), v.token(TokenClass::Positive, 1), v.token(TokenClass::Negative, 0)];
        let h = net.run(&[stream]).unwrap();
        let trace: Vec<f64> = (0..3).map(|t| h.state(0, t)[0]).collect();
        assert_eq!(trace, vec![1.0, 2.0, 1.0]);
        assert_eq!(net.final_labels(&h).unwrap(), vec![1]);
    }

    #[test]
    fn neutral_states_stay_bounded() {
        let net = rnn();
        let v = net.vocab();
        let stream: Vec<usize> = (0..200).map(|i| v.token(TokenClass::Neutral, i)).collect();
        let h = net.run(&[stream]).unwrap();
        let bound = 0.1 / (1.0 - net.decay());
        for t in 0..200 {
            let norm = h.state(0, t).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm < bound);
            assert_eq!(h.state(0, t)[0], 0.0);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_counter_rnn(1, 0.5, Vocab::default(), 0).is_err());
        assert!(build_counter_rnn(4, 1.0, Vocab::default(), 0).is_err());
        let empty = Vocab {
            positive: 0,
            ..Vocab::default()
        };
        assert!(build_counter_rnn(4, 0.5, empty, 0).is_err());
        assert!(rnn().run(&[vec![999]]).is_err());
    }

    #[test]
    fn evidence_only_at_start() {
        let v = Vocab::default();
        let cfg = StreamConfig {
            evidence_steps: Some(1),
            ..StreamConfig::default()
        };
        for stream in gen_token_streams(v, 8, 10, cfg, 3).unwrap() {
            assert_ne!(v.class_of(stream[0]), Some(TokenClass::Neutral));
            assert!(stream[1..].iter().all(|&t| v.class_of(t) == Some(TokenClass::Neutral)));
        }
    }
}
