//! Sources of Dirichlet-to-Neumann data.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::DMatrix;
use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::lattice::Domain;
use crate::vertex_op::{dtn_map, Network};

/// Anything that can answer D-N queries at a spectral parameter.
pub trait DtnOracle: Send + Sync {
    fn domain(&self) -> &Domain;
    fn dtn(&self, lambda: f64) -> Result<Arc<DMatrix<f64>>>;
}

#[derive(Clone, Debug)]
enum Cached {
    Ok(Arc<DMatrix<f64>>),
    Singular,
    Pole(String),
}

/// Computes the D-N map from a known network, memoised per exact `lambda`.
pub struct ForwardOracle {
    net: Network,
    cache: Mutex<HashMap<u64, Cached>>,
}

impl ForwardOracle {
    pub fn new(net: Network) -> Self {
        Self { net, cache: Mutex::new(HashMap::new()) }
    }
    pub fn network(&self) -> &Network {
        &self.net
    }
}

impl DtnOracle for ForwardOracle {
    fn domain(&self) -> &Domain {
        &self.net.domain
    }

    fn dtn(&self, lambda: f64) -> Result<Arc<DMatrix<f64>>> {
        let key = lambda.to_bits();
        if let Some(c) = self.cache.lock().get(&key).cloned() {
            return match c {
                Cached::Ok(m) => Ok(m),
                Cached::Singular => Err(Error::Singular { lambda }),
                Cached::Pole(what) => Err(Error::PoleGuard { lambda, what }),
            };
        }
        let res = dtn_map(&self.net, lambda);
        let entry = match &res {
            Ok(m) => Cached::Ok(Arc::new(m.clone())),
            Err(Error::Singular { .. }) => Cached::Singular,
            Err(Error::PoleGuard { what, .. }) => Cached::Pole(what.clone()),
            Err(_) => return res.map(Arc::new),
        };
        self.cache.lock().insert(key, entry.clone());
        match entry {
            Cached::Ok(m) => Ok(m),
            _ => res.map(Arc::new),
        }
    }
}

/// One recorded query outcome.
#[derive(Clone, Debug, PartialEq)]
pub enum Sample {
    Matrix(Arc<DMatrix<f64>>),
    Singular,
    Pole(String),
}

impl Sample {
    /// Outcome of a live query, or `None` for errors that cannot be replayed.
    pub fn from_result(r: &Result<Arc<DMatrix<f64>>>) -> Option<Self> {
        match r {
            Ok(m) => Some(Sample::Matrix(m.clone())),
            Err(Error::Singular { .. }) => Some(Sample::Singular),
            Err(Error::PoleGuard { what, .. }) => Some(Sample::Pole(what.clone())),
            Err(_) => None,
        }
    }
}

/// Replays D-N matrices recorded at exact `lambda` values.
pub struct RecordedOracle {
    domain: Arc<Domain>,
    samples: BTreeMap<u64, Sample>,
    missing: Mutex<Vec<f64>>,
}

impl RecordedOracle {
    pub fn new(domain: Arc<Domain>, samples: impl IntoIterator<Item = (f64, Sample)>) -> Result<Self> {
        let nb = domain.boundary().len();
        let mut map = BTreeMap::new();
        for (l, s) in samples {
            if let Sample::Matrix(m) = &s {
                if m.nrows() != nb || m.ncols() != nb {
                    return Err(Error::Validation(format!("sample at {l} is {}x{}, expected {nb}x{nb}", m.nrows(), m.ncols())));
                }
            }
            map.insert(l.to_bits(), s);
        }
        Ok(Self { domain, samples: map, missing: Mutex::new(Vec::new()) })
    }

    /// Recorded samples in increasing `lambda`.
    pub fn samples(&self) -> Vec<(f64, &Sample)> {
        let mut v: Vec<_> = self.samples.iter().map(|(k, s)| (f64::from_bits(*k), s)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    /// Every lambda that was asked for but not recorded.
    pub fn missing(&self) -> Vec<f64> {
        self.missing.lock().clone()
    }
}

impl DtnOracle for RecordedOracle {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn dtn(&self, lambda: f64) -> Result<Arc<DMatrix<f64>>> {
        match self.samples.get(&lambda.to_bits()) {
            Some(Sample::Matrix(m)) => Ok(m.clone()),
            Some(Sample::Singular) => Err(Error::Singular { lambda }),
            Some(Sample::Pole(what)) => Err(Error::PoleGuard { lambda, what: what.clone() }),
            None => {
                let mut miss = self.missing.lock();
                miss.push(lambda);
                Err(Error::MissingLambda { lambda, missing: miss.clone() })
            }
        }
    }
}

/// Wraps an oracle and remembers every lambda requested, in request order.
pub struct LoggingOracle<'a> {
    inner: &'a dyn DtnOracle,
    log: Mutex<Vec<f64>>,
}

impl<'a> LoggingOracle<'a> {
    pub fn new(inner: &'a dyn DtnOracle) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    /// Distinct requested values in increasing order.
    pub fn requested(&self) -> Vec<f64> {
        let mut v = self.log.lock().clone();
        v.sort_by(|a, b| a.total_cmp(b));
        v.dedup_by(|a, b| a.to_bits() == b.to_bits());
        v
    }
}

impl DtnOracle for LoggingOracle<'_> {
    fn domain(&self) -> &Domain {
        self.inner.domain()
    }
    fn dtn(&self, lambda: f64) -> Result<Arc<DMatrix<f64>>> {
        self.log.lock().push(lambda);
        self.inner.dtn(lambda)
    }
}
