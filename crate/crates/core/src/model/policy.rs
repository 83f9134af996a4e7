use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{ContractId, ModelError};
use crate::codec::{CodecError, Decoder, Encoder};
use crate::digest::Digest;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrgId(String);

impl OrgId {
    pub fn new(id: impl Into<String>) -> Self {
        OrgId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for OrgId {
    fn from(s: &str) -> Self {
        OrgId::new(s)
    }
}

impl fmt::Debug for OrgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for OrgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `threshold` of `required_orgs` must endorse every invocation of `contract`.
///
/// Stored as an ordinary versioned state at [`super::StateKey::policy`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementPolicy {
    pub contract: ContractId,
    pub required_orgs: BTreeSet<OrgId>,
    pub threshold: u32,
}

impl EndorsementPolicy {
    pub fn new(
        contract: ContractId,
        required_orgs: impl IntoIterator<Item = OrgId>,
        threshold: u32,
    ) -> Result<Self, ModelError> {
        let policy = EndorsementPolicy {
            contract,
            required_orgs: required_orgs.into_iter().collect(),
            threshold,
        };
        policy.check()?;
        Ok(policy)
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.threshold == 0 || self.threshold as usize > self.required_orgs.len() {
            return Err(ModelError::InvalidPolicy {
                contract: self.contract.clone(),
                reason: format!(
                    "threshold {} outside 1..={}",
                    self.threshold,
                    self.required_orgs.len()
                ),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.str(self.contract.as_str()).len(self.required_orgs.len());
        for org in &self.required_orgs {
            e.str(org.as_str());
        }
        e.u32(self.threshold);
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let contract = ContractId::new(d.str("contract id")?);
        let n = d.len()?;
        let mut required_orgs = BTreeSet::new();
        for _ in 0..n {
            required_orgs.insert(OrgId::new(d.str("org id")?));
        }
        let threshold = d.u32()?;
        d.finish()?;
        let policy = EndorsementPolicy {
            contract,
            required_orgs,
            threshold,
        };
        policy.check().map_err(|e| CodecError::Malformed {
            what: "endorsement policy",
            reason: e.to_string(),
        })?;
        Ok(policy)
    }
}

/// Per-org endorsement secrets. Endorsements are keyed digests
/// `H(secret ∥ response)` rather than certificate-backed signatures.
#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    secrets: BTreeMap<OrgId, [u8; 32]>,
}

impl KeyRegistry {
    /// Derives a secret for each org from `seed`.
    pub fn derive<'a>(seed: u64, orgs: impl IntoIterator<Item = &'a OrgId>) -> Self {
        let secrets = orgs
            .into_iter()
            .map(|org| {
                let d = Digest::of_parts(&[b"eov-org-secret", &seed.to_be_bytes(), org.as_str().as_bytes()]);
                (org.clone(), d.0)
            })
            .collect();
        KeyRegistry { secrets }
    }

    pub fn orgs(&self) -> impl Iterator<Item = &OrgId> {
        self.secrets.keys()
    }

    pub fn sign(&self, org: &OrgId, response: &[u8]) -> Digest {
        match self.secrets.get(org) {
            Some(secret) => Digest::of_parts(&[secret, response]),
            // Unknown orgs produce a signature nobody can verify.
            None => Digest::of_parts(&[b"unknown-org", org.as_str().as_bytes(), response]),
        }
    }

    pub fn verify(&self, org: &OrgId, response: &[u8], signature: &Digest) -> bool {
        self.secrets
            .get(org)
            .is_some_and(|secret| Digest::of_parts(&[secret, response]) == *signature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orgs(names: &[&str]) -> Vec<OrgId> {
        names.iter().map(|n| OrgId::new(*n)).collect()
    }

    #[test]
    fn threshold_bounds_enforced() {
        assert!(EndorsementPolicy::new("S1".into(), orgs(&["A", "B"]), 0).is_err());
        assert!(EndorsementPolicy::new("S1".into(), orgs(&["A", "B"]), 3).is_err());
        assert!(EndorsementPolicy::new("S1".into(), orgs(&["A", "B"]), 2).is_ok());
    }

    #[test]
    fn policy_bytes_round_trip() {
        let p = EndorsementPolicy::new("S1".into(), orgs(&["B", "A"]), 1).unwrap();
        assert_eq!(EndorsementPolicy::from_bytes(&p.to_bytes()).unwrap(), p);
    }

    #[test]
    fn keyed_digest_verifies_only_for_signer() {
        let a = OrgId::new("A");
        let b = OrgId::new("B");
        let keys = KeyRegistry::derive(7, [&a, &b]);
        let sig = keys.sign(&a, b"resp");
        assert!(keys.verify(&a, b"resp", &sig));
        assert!(!keys.verify(&b, b"resp", &sig));
        assert!(!keys.verify(&a, b"other", &sig));
    }
}
