//! Chain file: a sequence of `u32 length (big-endian) || block encoding`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::Block;
use crate::codec::{CodecError, Decode, Encode};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("chain file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("block {index} at byte {offset}: {source}")]
    Codec {
        index: usize,
        offset: usize,
        #[source]
        source: CodecError,
    },
}

pub fn write_chain_bytes(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    for block in blocks {
        let bytes = block.encode();
        out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

pub fn read_chain_bytes(bytes: &[u8]) -> Result<Vec<Block>, StoreError> {
    let mut blocks = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        let Some(prefix) = bytes.get(offset..offset + 4) else {
            return Err(StoreError::Truncated { offset });
        };
        let len = u32::from_be_bytes(prefix.try_into().expect("4 bytes")) as usize;
        let start = offset + 4;
        let Some(body) = bytes.get(start..start.saturating_add(len)) else {
            return Err(StoreError::Truncated { offset });
        };
        let block = Block::decode(body).map_err(|source| StoreError::Codec {
            index: blocks.len(),
            offset,
            source,
        })?;
        blocks.push(block);
        offset = start + len;
    }
    Ok(blocks)
}

pub fn write_chain_file(path: &Path, blocks: &[Block]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| StoreError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, write_chain_bytes(blocks)).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_chain_file(path: &Path) -> Result<Vec<Block>, StoreError> {
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_chain_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::tests::build_chain;

    #[test]
    fn file_round_trip() {
        let chain = build_chain(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/chain.bin");
        write_chain_file(&path, chain.ledger.blocks()).unwrap();
        assert_eq!(read_chain_file(&path).unwrap(), chain.ledger.blocks());
    }

    #[test]
    fn empty_and_truncated_input() {
        assert!(read_chain_bytes(&[]).unwrap().is_empty());
        let chain = build_chain(2);
        let bytes = write_chain_bytes(chain.ledger.blocks());
        assert!(matches!(
            read_chain_bytes(&bytes[..bytes.len() - 1]),
            Err(StoreError::Truncated { .. })
        ));
        assert!(matches!(
            read_chain_bytes(&[0, 0]),
            Err(StoreError::Truncated { offset: 0 })
        ));
    }
}
