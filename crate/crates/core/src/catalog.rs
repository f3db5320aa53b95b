//! Named base systems.

use crate::base::BaseSystem;

/// `(sqrt 5 - 1)/2`.
pub const GOLDEN_MEAN: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub parameters: &'static str,
    build: fn() -> BaseSystem,
}

impl CatalogEntry {
    pub fn system(&self) -> BaseSystem {
        (self.build)()
    }
}

pub fn entries() -> &'static [CatalogEntry] {
    &[
        CatalogEntry {
            name: "doubling",
            parameters: "m=2, p=(1/2,1/2)",
            build: BaseSystem::doubling,
        },
        CatalogEntry {
            name: "bernoulli",
            parameters: "m=2, p=(0.3,0.7)",
            build: || BaseSystem::expanding(vec![0.3, 0.7]).expect("valid weights"),
        },
        CatalogEntry {
            name: "tripling",
            parameters: "m=3, p=(1/3,1/3,1/3)",
            build: || BaseSystem::expanding(vec![1.0 / 3.0; 3]).expect("valid weights"),
        },
        CatalogEntry {
            name: "golden-rotation",
            parameters: "alpha=(sqrt5-1)/2",
            build: || BaseSystem::rotation(GOLDEN_MEAN).expect("finite angle"),
        },
        CatalogEntry {
            name: "three-cycle",
            parameters: "0->1->2->0, uniform",
            build: || BaseSystem::cycle(3),
        },
    ]
}

pub fn lookup(name: &str) -> Option<BaseSystem> {
    entries().iter().find(|e| e.name == name).map(CatalogEntry::system)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::Kind;

    #[test]
    fn entropies() {
        assert_eq!(lookup("doubling").unwrap().entropy(), std::f64::consts::LN_2);
        assert_eq!(lookup("golden-rotation").unwrap().entropy(), 0.0);
        assert!((lookup("tripling").unwrap().entropy() - 3f64.ln()).abs() < 1e-15);
        let kinds: Vec<Kind> = entries().iter().map(|e| e.system().kind()).collect();
        for k in [Kind::Expanding, Kind::Rotation, Kind::Permutation] {
            assert!(kinds.contains(&k));
        }
        assert!(lookup("baker").is_none());
    }
}
