//! Discrete token sequences.

use crate::error::{Error, Result};

/// An ordered sequence of discrete token ids, either full length `N` or a
/// truncated prefix of one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid_input("token sequence must not be empty"));
        }
        Ok(Self { ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn into_ids(self) -> Vec<u32> {
        self.ids
    }

    /// The prefix of length `keep`; the sequence itself is unchanged.
    pub fn prefix(&self, keep: usize) -> Result<Self> {
        if keep == 0 || keep > self.ids.len() {
            return Err(Error::invalid_input(format!(
                "prefix length {} out of range 1..={}",
                keep,
                self.ids.len()
            )));
        }
        Ok(Self { ids: self.ids[..keep].to_vec() })
    }

    /// Check every id against a codebook of `codebook_size` entries.
    pub fn validate_ids(&self, codebook_size: usize) -> Result<()> {
        for &id in &self.ids {
            if id as usize >= codebook_size {
                return Err(Error::InvalidToken { id, codebook_size: codebook_size as u32 });
            }
        }
        Ok(())
    }

    /// Additionally check the length bound `1..=n_max`.
    pub fn validate(&self, codebook_size: usize, n_max: usize) -> Result<()> {
        if self.ids.len() > n_max {
            return Err(Error::invalid_input(format!(
                "sequence length {} exceeds maximum {}",
                self.ids.len(),
                n_max
            )));
        }
        self.validate_ids(codebook_size)
    }
}

impl std::ops::Index<usize> for TokenSequence {
    type Output = u32;

    fn index(&self, i: usize) -> &u32 {
        &self.ids[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty() {
        assert!(TokenSequence::new(vec![]).is_err());
    }

    #[test]
    fn prefix_is_exact() {
        let q = TokenSequence::new(vec![5, 6, 7, 8]).unwrap();
        assert_eq!(q.prefix(2).unwrap().ids(), &[5, 6]);
        assert_eq!(q.prefix(4).unwrap(), q);
        assert!(q.prefix(0).is_err());
        assert!(q.prefix(5).is_err());
    }

    #[test]
    fn id_validation() {
        let q = TokenSequence::new(vec![0, 4095]).unwrap();
        assert!(q.validate_ids(4096).is_ok());
        assert!(matches!(
            q.validate_ids(4095),
            Err(Error::InvalidToken { id: 4095, .. })
        ));
    }
}
