use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::StateError;
use crate::codec::{Decoder, Encoder};
use crate::model::TxValidity;
use crate::sparse::DeliveredBlock;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredBlock {
    pub block: DeliveredBlock,
    pub flags: Vec<TxValidity>,
}

#[derive(Debug)]
struct Slot {
    stored: StoredBlock,
    /// File offset of the first flag byte.
    flags_offset: u64,
    bytes: u64,
}

/// Append-only chain of blocks with per-transaction validity flags.
///
/// File layout: a sequence of records, each `u32` big-endian record length
/// followed by the encoded block (tag byte, then full or sparse block
/// bytes), a `u32` flag count and one flag byte per transaction.
#[derive(Debug, Default)]
pub struct BlockStore {
    slots: Vec<Slot>,
    file: Option<(PathBuf, File)>,
    len_bytes: u64,
}

impl BlockStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Creates (truncating) a file-backed store.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, StateError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .truncate(true)
            .read(true)
            .write(true)
            .open(&path)
            .map_err(StateError::io)?;
        Ok(BlockStore {
            slots: Vec::new(),
            file: Some((path, file)),
            len_bytes: 0,
        })
    }

    /// Loads every record of an existing store file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StateError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).write(true).open(&path).map_err(StateError::io)?;
        let mut data = Vec::new();
        file.read_to_end(&mut data).map_err(StateError::io)?;
        let mut store = BlockStore {
            slots: Vec::new(),
            file: None,
            len_bytes: 0,
        };
        let mut pos = 0usize;
        while pos < data.len() {
            if data.len() - pos < 4 {
                return Err(StateError::Corrupt("truncated record length".into()));
            }
            let n = u32::from_be_bytes(data[pos..pos + 4].try_into().expect("4 bytes")) as usize;
            let body = data
                .get(pos + 4..pos + 4 + n)
                .ok_or_else(|| StateError::Corrupt("truncated record".into()))?;
            let (stored, flags_at) = decode_record(body)?;
            store.push_slot(stored, (pos + 4 + flags_at) as u64, (n + 4) as u64)?;
            pos += 4 + n;
        }
        store.file = Some((path, file));
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn first_number(&self) -> Option<u64> {
        self.slots.first().map(|s| s.stored.block.number())
    }

    pub fn last_number(&self) -> Option<u64> {
        self.slots.last().map(|s| s.stored.block.number())
    }

    /// Total encoded size of all records.
    pub fn byte_size(&self) -> u64 {
        self.len_bytes
    }

    pub fn get(&self, number: u64) -> Option<&StoredBlock> {
        let first = self.first_number()?;
        let i = number.checked_sub(first)? as usize;
        self.slots.get(i).map(|s| &s.stored)
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredBlock> {
        self.slots.iter().map(|s| &s.stored)
    }

    /// Size in bytes of the records for blocks `lo..=hi`.
    pub fn bytes_between(&self, lo: u64, hi: u64) -> u64 {
        self.slots
            .iter()
            .filter(|s| (lo..=hi).contains(&s.stored.block.number()))
            .map(|s| s.bytes)
            .sum()
    }

    pub fn append(&mut self, block: DeliveredBlock, flags: Vec<TxValidity>) -> Result<(), StateError> {
        let stored = StoredBlock { block, flags };
        let (body, flags_at) = encode_record(&stored);
        let offset = self.len_bytes;
        if let Some((_, file)) = &mut self.file {
            let mut rec = Vec::with_capacity(body.len() + 4);
            rec.extend_from_slice(&(body.len() as u32).to_be_bytes());
            rec.extend_from_slice(&body);
            file.seek(SeekFrom::End(0)).map_err(StateError::io)?;
            file.write_all(&rec).map_err(StateError::io)?;
        }
        self.push_slot(stored, offset + 4 + flags_at as u64, body.len() as u64 + 4)
    }

    fn push_slot(&mut self, stored: StoredBlock, flags_offset: u64, bytes: u64) -> Result<(), StateError> {
        let number = stored.block.number();
        if let Some(last) = self.last_number() {
            if number != last + 1 {
                return Err(StateError::NonContiguousBlock {
                    expected: last + 1,
                    got: number,
                });
            }
        }
        if stored.flags.len() != stored.block.tx_count() {
            return Err(StateError::FlagCountMismatch {
                block: number,
                flags: stored.flags.len(),
                txs: stored.block.tx_count(),
            });
        }
        self.len_bytes += bytes;
        self.slots.push(Slot {
            stored,
            flags_offset,
            bytes,
        });
        Ok(())
    }

    /// Rewrites one transaction's flag in place.
    pub fn set_flag(&mut self, number: u64, index: u32, flag: TxValidity) -> Result<(), StateError> {
        let first = self.first_number().ok_or(StateError::UnknownBlock(number))?;
        let slot = number
            .checked_sub(first)
            .and_then(|i| self.slots.get_mut(i as usize))
            .ok_or(StateError::UnknownBlock(number))?;
        let cell = slot
            .stored
            .flags
            .get_mut(index as usize)
            .ok_or(StateError::UnknownBlock(number))?;
        *cell = flag;
        if let Some((_, file)) = &mut self.file {
            file.seek(SeekFrom::Start(slot.flags_offset + index as u64)).map_err(StateError::io)?;
            file.write_all(&[flag.code()]).map_err(StateError::io)?;
        }
        Ok(())
    }

    pub fn sync(&mut self) -> Result<(), StateError> {
        if let Some((_, file)) = &mut self.file {
            file.sync_data().map_err(StateError::io)?;
        }
        Ok(())
    }
}

fn encode_record(stored: &StoredBlock) -> (Vec<u8>, usize) {
    let mut e = Encoder::new();
    stored.block.encode(&mut e);
    e.len(stored.flags.len());
    let flags_at = e.as_slice().len();
    for f in &stored.flags {
        e.u8(f.code());
    }
    (e.finish(), flags_at)
}

fn decode_record(body: &[u8]) -> Result<(StoredBlock, usize), StateError> {
    let mut d = Decoder::new(body);
    let block = DeliveredBlock::decode(&mut d)?;
    let n = d.len()?;
    let flags_at = d.position();
    let mut flags = Vec::with_capacity(n);
    for _ in 0..n {
        let c = d.u8()?;
        flags.push(TxValidity::from_code(c).ok_or_else(|| StateError::Corrupt(format!("bad flag {c}")))?);
    }
    d.finish()?;
    Ok((StoredBlock { block, flags }, flags_at))
}
