//! Variable-length token-stream file format (`.1dp`) and the image-to-file
//! pipeline.
//!
//! Layout, all multi-byte integers big-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "1DPC"
//! 4       1     version (1)
//! 5       1     flags (reserved, 0)
//! 6       2     width
//! 8       2     height
//! 10      2     token_count L
//! 12      1     bits_per_token
//! 13      8     model_id (truncated hash of checkpoint weights)
//! 21      ...   payload: ceil(L * bits_per_token / 8) bytes
//! ```
//!
//! Tokens are packed MSB-first in sequence order; trailing pad bits are zero.
//! At 12 bits per token the payload costs 1.5 bytes per token.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::TokenizerModel;
use crate::tokens::TokenSequence;
use crate::ImageTensor;

pub const MAGIC: [u8; 4] = *b"1DPC";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 21;

/// Parsing strictness. `Strict` rejects nonzero pad bits and fingerprint
/// mismatches; `Lenient` records them instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

/// Parsed header of a token-stream file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u8,
    pub flags: u8,
    pub width: u16,
    pub height: u16,
    pub token_count: u16,
    pub bits_per_token: u8,
    pub model_id: [u8; 8],
}

impl StreamHeader {
    pub fn payload_len(&self) -> usize {
        payload_len(self.token_count as usize, self.bits_per_token)
    }

    pub fn model_id_hex(&self) -> String {
        self.model_id.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A full token-stream file: header plus packed payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStreamFile {
    pub header: StreamHeader,
    pub payload: Vec<u8>,
}

/// Packed payload size in bytes.
pub fn payload_len(token_count: usize, bits_per_token: u8) -> usize {
    (token_count * bits_per_token as usize).div_ceil(8)
}

/// Total file size for a given token count.
pub fn file_len(token_count: usize, bits_per_token: u8) -> usize {
    HEADER_LEN + payload_len(token_count, bits_per_token)
}

/// Pack token ids MSB-first at a fixed bit width. Trailing pad bits are zero.
pub fn pack_tokens(tokens: &TokenSequence, bits_per_token: u8) -> Result<Vec<u8>> {
    if bits_per_token == 0 || bits_per_token > 16 {
        return Err(Error::config(format!("bits_per_token {bits_per_token} out of range 1..=16")));
    }
    let limit = 1u32 << bits_per_token;
    let mut out = vec![0u8; payload_len(tokens.len(), bits_per_token)];
    let mut bit_pos = 0usize;
    for &id in tokens.ids() {
        if id >= limit {
            return Err(Error::InvalidToken { id, codebook_size: limit });
        }
        for i in (0..bits_per_token).rev() {
            if (id >> i) & 1 == 1 {
                out[bit_pos / 8] |= 0x80 >> (bit_pos % 8);
            }
            bit_pos += 1;
        }
    }
    Ok(out)
}

/// Inverse of [`pack_tokens`]. In `Strict` mode the payload length must match
/// the formula exactly and pad bits must be zero.
pub fn unpack_tokens(
    payload: &[u8],
    token_count: usize,
    bits_per_token: u8,
    mode: ParseMode,
) -> Result<TokenSequence> {
    if bits_per_token == 0 || bits_per_token > 16 {
        return Err(Error::corrupt(format!("bits_per_token {bits_per_token} out of range 1..=16")));
    }
    if token_count == 0 {
        return Err(Error::corrupt("token_count must be at least 1"));
    }
    let expected = payload_len(token_count, bits_per_token);
    if payload.len() != expected {
        return Err(Error::corrupt(format!(
            "payload is {} bytes, expected {} for {} tokens at {} bits",
            payload.len(),
            expected,
            token_count,
            bits_per_token
        )));
    }
    let mut ids = Vec::with_capacity(token_count);
    let mut bit_pos = 0usize;
    for _ in 0..token_count {
        let mut id = 0u32;
        for _ in 0..bits_per_token {
            let bit = (payload[bit_pos / 8] >> (7 - bit_pos % 8)) & 1;
            id = (id << 1) | bit as u32;
            bit_pos += 1;
        }
        ids.push(id);
    }
    if mode == ParseMode::Strict {
        while bit_pos < payload.len() * 8 {
            if (payload[bit_pos / 8] >> (7 - bit_pos % 8)) & 1 != 0 {
                return Err(Error::corrupt("nonzero pad bits"));
            }
            bit_pos += 1;
        }
    }
    TokenSequence::new(ids)
}

impl TokenStreamFile {
    /// Assemble a file from a token sequence and stream metadata.
    pub fn from_tokens(
        tokens: &TokenSequence,
        width: u16,
        height: u16,
        bits_per_token: u8,
        model_id: [u8; 8],
    ) -> Result<Self> {
        if tokens.len() > u16::MAX as usize {
            return Err(Error::invalid_input("token count exceeds stream format limit"));
        }
        let payload = pack_tokens(tokens, bits_per_token)?;
        Ok(Self {
            header: StreamHeader {
                version: FORMAT_VERSION,
                flags: 0,
                width,
                height,
                token_count: tokens.len() as u16,
                bits_per_token,
                model_id,
            },
            payload,
        })
    }

    pub fn tokens(&self, mode: ParseMode) -> Result<TokenSequence> {
        unpack_tokens(&self.payload, self.header.token_count as usize, self.header.bits_per_token, mode)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.header.version);
        out.push(self.header.flags);
        out.extend_from_slice(&self.header.width.to_be_bytes());
        out.extend_from_slice(&self.header.height.to_be_bytes());
        out.extend_from_slice(&self.header.token_count.to_be_bytes());
        out.push(self.header.bits_per_token);
        out.extend_from_slice(&self.header.model_id);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], mode: ParseMode) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::corrupt(format!("file is {} bytes, shorter than the header", bytes.len())));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::corrupt("bad magic"));
        }
        let version = bytes[4];
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header = StreamHeader {
            version,
            flags: bytes[5],
            width: u16::from_be_bytes([bytes[6], bytes[7]]),
            height: u16::from_be_bytes([bytes[8], bytes[9]]),
            token_count: u16::from_be_bytes([bytes[10], bytes[11]]),
            bits_per_token: bytes[12],
            model_id: bytes[13..21].try_into().unwrap(),
        };
        if header.token_count == 0 {
            return Err(Error::corrupt("token_count must be at least 1"));
        }
        let payload = bytes[HEADER_LEN..].to_vec();
        if payload.len() != header.payload_len() {
            return Err(Error::corrupt(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                header.payload_len()
            )));
        }
        if mode == ParseMode::Strict {
            // Validate pad bits eagerly so a corrupt tail fails at parse time.
            unpack_tokens(&payload, header.token_count as usize, header.bits_per_token, mode)?;
        }
        Ok(Self { header, payload })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, mode: ParseMode) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        Self::from_bytes(&bytes, mode)
    }
}

/// Result of decoding a stream file, including fingerprint provenance.
#[derive(Debug)]
pub struct DecodedStream {
    pub image: ImageTensor,
    pub header: StreamHeader,
    /// Number of tokens actually decoded (after any reader-side prefix).
    pub used_tokens: usize,
    pub model_id_matches: bool,
}

/// Tokenize an image file at a chosen token budget and write a `.1dp` stream.
pub fn encode_image(
    image_path: impl AsRef<Path>,
    model: &TokenizerModel,
    n_tokens: usize,
    out_path: impl AsRef<Path>,
) -> Result<TokenStreamFile> {
    let n_max = model.config().n_latent_tokens;
    if n_tokens == 0 || n_tokens > n_max {
        return Err(Error::invalid_input(format!("n_tokens {n_tokens} out of range 1..={n_max}")));
    }
    let size = model.config().image_size;
    let image = ImageTensor::load_fitted(image_path, size)?;
    let tokens = model.tokenize(&image)?.prefix(n_tokens)?;
    let file = TokenStreamFile::from_tokens(
        &tokens,
        size as u16,
        size as u16,
        model.config().bits_per_token(),
        model.fingerprint(),
    )?;
    file.write(out_path)?;
    Ok(file)
}

/// Decode a `.1dp` stream, optionally keeping only the first `prefix_n`
/// stored tokens — a reader-side quality downgrade with no re-encode.
pub fn decode_file(
    path: impl AsRef<Path>,
    model: &TokenizerModel,
    prefix_n: Option<usize>,
    mode: ParseMode,
) -> Result<DecodedStream> {
    let file = TokenStreamFile::read(path, mode)?;
    decode_stream(&file, model, prefix_n, mode)
}

/// As [`decode_file`], for an already-parsed stream.
pub fn decode_stream(
    file: &TokenStreamFile,
    model: &TokenizerModel,
    prefix_n: Option<usize>,
    mode: ParseMode,
) -> Result<DecodedStream> {
    let model_id_matches = file.header.model_id == model.fingerprint();
    if !model_id_matches && mode == ParseMode::Strict {
        return Err(Error::ModelIdMismatch {
            stream: file.header.model_id_hex(),
            checkpoint: model
                .fingerprint()
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect(),
        });
    }
    if file.header.bits_per_token != model.config().bits_per_token() {
        return Err(Error::corrupt(format!(
            "stream uses {} bits per token, model expects {}",
            file.header.bits_per_token,
            model.config().bits_per_token()
        )));
    }
    let mut tokens = file.tokens(mode)?;
    if let Some(n) = prefix_n {
        tokens = tokens.prefix(n)?;
    }
    let used_tokens = tokens.len();
    let image = model.detokenize(&tokens)?;
    Ok(DecodedStream { image, header: file.header.clone(), used_tokens, model_id_matches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn golden_pack_12bit() {
        assert_eq!(pack_tokens(&seq(&[0, 4095]), 12).unwrap(), vec![0x00, 0x0F, 0xFF]);
    }

    #[test]
    fn golden_unpack_12bit() {
        let q = unpack_tokens(&[0x00, 0x0F, 0xFF], 2, 12, ParseMode::Strict).unwrap();
        assert_eq!(q.ids(), &[0, 4095]);
    }

    #[test]
    fn single_zero_token_pads_with_zero() {
        assert_eq!(pack_tokens(&seq(&[0]), 12).unwrap(), vec![0x00, 0x00]);
    }

    #[test]
    fn payload_is_1_5_bytes_per_token_at_12_bits() {
        // 256 tokens at 12 bits occupy exactly 384 bytes.
        let ids: Vec<u32> = (0..256).collect();
        assert_eq!(pack_tokens(&seq(&ids), 12).unwrap().len(), 384);
        assert_eq!(payload_len(32, 12), 48);
        assert_eq!(file_len(32, 12), 69);
        assert_eq!(file_len(1, 12), 23);
    }

    #[test]
    fn oversized_token_rejected() {
        assert!(matches!(
            pack_tokens(&seq(&[4096]), 12),
            Err(Error::InvalidToken { id: 4096, .. })
        ));
    }

    #[test]
    fn truncated_payload_rejected() {
        let err = unpack_tokens(&[0x00, 0x0F], 2, 12, ParseMode::Strict);
        assert!(matches!(err, Err(Error::CorruptStream(_))));
    }

    #[test]
    fn nonzero_pad_bits_rejected_in_strict_mode() {
        // Tokens [0] at 12 bits: low 4 bits of the second byte are padding.
        let payload = vec![0x00, 0x01];
        assert!(unpack_tokens(&payload, 1, 12, ParseMode::Strict).is_err());
        let q = unpack_tokens(&payload, 1, 12, ParseMode::Lenient).unwrap();
        assert_eq!(q.ids(), &[0]);
    }

    #[test]
    fn header_roundtrip() {
        let file = TokenStreamFile::from_tokens(&seq(&[1, 2, 3]), 32, 32, 12, [9; 8]).unwrap();
        let bytes = file.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 5);
        let parsed = TokenStreamFile::from_bytes(&bytes, ParseMode::Strict).unwrap();
        assert_eq!(parsed, file);
        assert_eq!(parsed.tokens(ParseMode::Strict).unwrap().ids(), &[1, 2, 3]);
    }

    #[test]
    fn unsupported_version_rejected() {
        let file = TokenStreamFile::from_tokens(&seq(&[1]), 32, 32, 12, [0; 8]).unwrap();
        let mut bytes = file.to_bytes();
        bytes[4] = 2;
        assert!(matches!(
            TokenStreamFile::from_bytes(&bytes, ParseMode::Strict),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let file = TokenStreamFile::from_tokens(&seq(&[1]), 32, 32, 12, [0; 8]).unwrap();
        let mut bytes = file.to_bytes();
        bytes[0] = b'X';
        assert!(TokenStreamFile::from_bytes(&bytes, ParseMode::Strict).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_random_sequences(
            bits in 1u8..=16,
            len in 1usize..=256,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let limit = 1u32 << bits;
            let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..limit)).collect();
            let q = TokenSequence::new(ids).unwrap();
            let payload = pack_tokens(&q, bits).unwrap();
            prop_assert_eq!(payload.len(), payload_len(len, bits));
            let back = unpack_tokens(&payload, len, bits, ParseMode::Strict).unwrap();
            prop_assert_eq!(back, q);
        }
    }
}
