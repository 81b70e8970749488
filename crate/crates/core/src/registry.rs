//! Operator lists and their slot-aligned bit-plane encoding.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{rngs::ChaCha20Rng, RngExt, SeedableRng};
use sha2::{Digest, Sha256};

use crate::encoding::{CwcParams, PbhParams, Pei};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ListKind {
    Blacklist,
    Greylist,
}

impl ListKind {
    pub fn other(self) -> Self {
        match self {
            ListKind::Blacklist => ListKind::Greylist,
            ListKind::Greylist => ListKind::Blacklist,
        }
    }
}

impl fmt::Display for ListKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ListKind::Blacklist => "blacklist",
            ListKind::Greylist => "greylist",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviceList {
    kind: ListKind,
    entries: BTreeSet<Pei>,
}

impl DeviceList {
    pub fn new(kind: ListKind) -> Self {
        DeviceList {
            kind,
            entries: BTreeSet::new(),
        }
    }

    pub fn from_entries(kind: ListKind, entries: impl IntoIterator<Item = Pei>) -> Result<Self, Error> {
        let mut list = Self::new(kind);
        for p in entries {
            if !list.entries.insert(p) {
                return Err(Error::Registry(format!("duplicate entry {p}")));
            }
        }
        Ok(list)
    }

    pub fn kind(&self) -> ListKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, p: &Pei) -> bool {
        self.entries.contains(p)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pei> {
        self.entries.iter()
    }

    /// Order-independent digest of the entries.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in &self.entries {
            h.update(p.value().to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Deterministic list of distinct random identifiers.
pub fn gen_random_list(kind: ListKind, size: usize, seed: u64) -> DeviceList {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut entries = BTreeSet::new();
    while entries.len() < size {
        entries.insert(Pei::new(rng.random_range(0..100_000_000_000_000)).unwrap());
    }
    DeviceList { kind, entries }
}

/// Blacklist, greylist and a pool of identifiers on neither, all disjoint
/// and drawn from one seeded stream.
pub fn gen_disjoint_lists(
    black: usize,
    grey: usize,
    unlisted: usize,
    seed: u64,
) -> (DeviceList, DeviceList, Vec<Pei>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(black + grey + unlisted);
    let mut draw = |count: usize| {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let p = Pei::new(rng.random_range(0..100_000_000_000_000)).unwrap();
            if seen.insert(p) {
                out.push(p);
            }
        }
        out
    };
    let b = draw(black);
    let g = draw(grey);
    let u = draw(unlisted);
    (
        DeviceList {
            kind: ListKind::Blacklist,
            entries: b.into_iter().collect(),
        },
        DeviceList {
            kind: ListKind::Greylist,
            entries: g.into_iter().collect(),
        },
        u,
    )
}

/// Reads one identifier per line; blank lines are skipped.
pub fn read_list_file(path: &Path, kind: ListKind) -> Result<DeviceList, Error> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut list = DeviceList::new(kind);
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::ListFile {
            line: lineno,
            msg: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let p: Pei = trimmed.parse().map_err(|e: Error| Error::ListFile {
            line: lineno,
            msg: e.to_string(),
        })?;
        if !list.entries.insert(p) {
            return Err(Error::ListFile {
                line: lineno,
                msg: format!("duplicate entry {p}"),
            });
        }
    }
    Ok(list)
}

pub fn write_list_file(path: &Path, list: &DeviceList) -> Result<(), Error> {
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    let mut w = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for p in &list.entries {
        writeln!(w, "{p}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Slot-aligned bit-planes for one list.
///
/// Entries sharing a slot are ordered by residual and assigned to rows in
/// that order, so the layout depends only on the entry set.
#[derive(Clone, Debug)]
pub struct EncodedList {
    pbh: PbhParams,
    cwc: CwcParams,
    /// sorted residuals per slot
    columns: Vec<Vec<u64>>,
    /// `rows[r][j * words + w]`: plane `j`, slots `64w..64w+63`
    rows: Vec<Vec<u64>>,
    /// dirty slot -> occupancy currently reflected in `rows`
    dirty: BTreeMap<usize, usize>,
    len: usize,
}

impl PartialEq for EncodedList {
    fn eq(&self, other: &Self) -> bool {
        self.pbh == other.pbh && self.cwc == other.cwc && self.columns == other.columns && self.rows == other.rows
    }
}

impl EncodedList {
    pub fn empty(pbh: &PbhParams, cwc: &CwcParams) -> Result<Self, Error> {
        if cwc.lambda_bar != pbh.lambda_bar() {
            return Err(Error::Registry(format!(
                "codeword residual length {} does not match hashing residual length {}",
                cwc.lambda_bar,
                pbh.lambda_bar()
            )));
        }
        Ok(EncodedList {
            pbh: pbh.clone(),
            cwc: *cwc,
            columns: vec![Vec::new(); pbh.slots()],
            rows: Vec::new(),
            dirty: BTreeMap::new(),
            len: 0,
        })
    }

    /// From-scratch encoding of `list`.
    pub fn preprocess(list: &DeviceList, pbh: &PbhParams, cwc: &CwcParams) -> Result<Self, Error> {
        let mut enc = Self::empty(pbh, cwc)?;
        for p in list.iter() {
            let (slot, res) = pbh.map(p.value())?;
            enc.columns[slot].push(res);
        }
        for col in &mut enc.columns {
            col.sort_unstable();
        }
        enc.len = list.len();
        let height = enc.columns.iter().map(Vec::len).max().unwrap_or(0);
        enc.rows = vec![vec![0u64; enc.row_words()]; height];
        for slot in 0..enc.columns.len() {
            enc.write_column(slot)?;
        }
        Ok(enc)
    }

    fn words(&self) -> usize {
        self.pbh.slots().div_ceil(64)
    }

    fn row_words(&self) -> usize {
        self.cwc.l as usize * self.words()
    }

    fn write_column(&mut self, slot: usize) -> Result<(), Error> {
        let words = self.words();
        let (w, b) = (slot / 64, slot % 64);
        for r in 0..self.rows.len() {
            let cw = match self.columns[slot].get(r) {
                Some(&res) => Some(self.cwc.encode(res)?),
                None => None,
            };
            let row = &mut self.rows[r];
            for j in 0..self.cwc.l as usize {
                let set = cw.as_ref().is_some_and(|c| c.bits()[j]);
                let word = &mut row[j * words + w];
                if set {
                    *word |= 1 << b;
                } else {
                    *word &= !(1 << b);
                }
            }
        }
        Ok(())
    }

    /// Adds an entry; only its slot is marked dirty.
    pub fn insert(&mut self, p: Pei) -> Result<(), Error> {
        let (slot, res) = self.pbh.map(p.value())?;
        let col = &mut self.columns[slot];
        match col.binary_search(&res) {
            Ok(_) => Err(Error::Registry(format!("duplicate entry {p}"))),
            Err(pos) => {
                let old = col.len();
                col.insert(pos, res);
                self.dirty.entry(slot).or_insert(old);
                self.len += 1;
                Ok(())
            }
        }
    }

    pub fn remove(&mut self, p: Pei) -> Result<(), Error> {
        let (slot, res) = self.pbh.map(p.value())?;
        let col = &mut self.columns[slot];
        match col.binary_search(&res) {
            Ok(pos) => {
                let old = col.len();
                col.remove(pos);
                self.dirty.entry(slot).or_insert(old);
                self.len -= 1;
                Ok(())
            }
            Err(_) => Err(Error::Registry(format!("{p} is not listed"))),
        }
    }

    pub fn dirty_slots(&self) -> BTreeSet<usize> {
        self.dirty.keys().copied().collect()
    }

    /// Re-encodes dirty slots. Returns the rows whose contents may have
    /// changed.
    pub fn refresh(&mut self) -> Result<Vec<usize>, Error> {
        if self.dirty.is_empty() {
            return Ok(Vec::new());
        }
        let height = self.columns.iter().map(Vec::len).max().unwrap_or(0);
        self.rows.resize(height, vec![0u64; self.row_words()]);
        let dirty = std::mem::take(&mut self.dirty);
        let mut touched = 0;
        for (&slot, &old) in &dirty {
            touched = touched.max(old).max(self.columns[slot].len());
            self.write_column(slot)?;
        }
        Ok((0..touched.min(height)).collect())
    }

    pub fn pbh(&self) -> &PbhParams {
        &self.pbh
    }

    pub fn cwc(&self) -> &CwcParams {
        &self.cwc
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn occupancy(&self, slot: usize) -> usize {
        self.columns[slot].len()
    }

    pub fn occupancies(&self) -> Vec<usize> {
        self.columns.iter().map(Vec::len).collect()
    }

    /// Bit `j` of the codeword at (`row`, `slot`).
    pub fn bit(&self, row: usize, plane: usize, slot: usize) -> bool {
        let words = self.words();
        (self.rows[row][plane * words + slot / 64] >> (slot % 64)) & 1 == 1
    }

    /// Plane `j` of `row` as 0/1 slot values.
    pub fn plane(&self, row: usize, plane: usize) -> Vec<u64> {
        let words = self.words();
        let src = &self.rows[row][plane * words..(plane + 1) * words];
        (0..self.pbh.slots()).map(|s| (src[s / 64] >> (s % 64)) & 1).collect()
    }

    pub fn raw_rows(&self) -> &[Vec<u64>] {
        &self.rows
    }

    fn cache_key(&self) -> [u8; 32] {
        cache_key(&self.pbh, &self.cwc)
    }

    /// Writes the bit-planes to a sidecar file tagged with the parameter
    /// key and list digest.
    pub fn save_cache(&self, path: &Path, list: &DeviceList) -> Result<(), Error> {
        let mut out = Vec::with_capacity(80 + self.rows.len() * self.row_words() * 8);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&self.cache_key());
        out.extend_from_slice(&list.digest());
        out.extend_from_slice(&(self.rows.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.row_words() as u32).to_le_bytes());
        for row in &self.rows {
            for w in row {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        fs::write(path, out).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    /// Loads cached bit-planes if they were produced for the same
    /// parameters and entries; `Ok(None)` means the cache is stale.
    pub fn load_cache(
        path: &Path,
        list: &DeviceList,
        pbh: &PbhParams,
        cwc: &CwcParams,
    ) -> Result<Option<Self>, Error> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::Io(format!("{}: {e}", path.display()))),
        };
        let head = CACHE_MAGIC.len() + 64 + 8;
        if bytes.len() < head || &bytes[..CACHE_MAGIC.len()] != CACHE_MAGIC {
            return Ok(None);
        }
        let m = CACHE_MAGIC.len();
        if bytes[m..m + 32] != cache_key(pbh, cwc) || bytes[m + 32..m + 64] != list.digest() {
            return Ok(None);
        }
        let rows = u32::from_le_bytes(bytes[m + 64..m + 68].try_into().unwrap()) as usize;
        let row_words = u32::from_le_bytes(bytes[m + 68..m + 72].try_into().unwrap()) as usize;
        let mut enc = Self::empty(pbh, cwc)?;
        if row_words != enc.row_words() || bytes.len() != head + rows * row_words * 8 {
            return Ok(None);
        }
        for p in list.iter() {
            let (slot, res) = pbh.map(p.value())?;
            enc.columns[slot].push(res);
        }
        for col in &mut enc.columns {
            col.sort_unstable();
        }
        enc.len = list.len();
        enc.rows = bytes[head..]
            .chunks_exact(row_words * 8)
            .map(|r| r.chunks_exact(8).map(|w| u64::from_le_bytes(w.try_into().unwrap())).collect())
            .collect();
        Ok(Some(enc))
    }
}

const CACHE_MAGIC: &[u8] = b"PSMBP1";

fn cache_key(pbh: &PbhParams, cwc: &CwcParams) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(pbh.perm_key());
    h.update((pbh.slots() as u64).to_le_bytes());
    h.update(pbh.lambda().to_le_bytes());
    h.update(cwc.h.to_le_bytes());
    h.update(cwc.l.to_le_bytes());
    h.finalize().into()
}

/// Both lists, kept disjoint, with their encodings.
#[derive(Clone, Debug)]
pub struct Registry {
    black: DeviceList,
    grey: DeviceList,
    black_enc: EncodedList,
    grey_enc: EncodedList,
}

impl Registry {
    pub fn new(black: DeviceList, grey: DeviceList, pbh: &PbhParams, cwc: &CwcParams) -> Result<Self, Error> {
        if black.kind != ListKind::Blacklist || grey.kind != ListKind::Greylist {
            return Err(Error::Registry("lists passed in the wrong order".into()));
        }
        let (small, big) = if black.len() < grey.len() { (&black, &grey) } else { (&grey, &black) };
        if let Some(p) = small.iter().find(|p| big.contains(p)) {
            return Err(Error::Registry(format!("{p} is on both lists")));
        }
        let black_enc = EncodedList::preprocess(&black, pbh, cwc)?;
        let grey_enc = EncodedList::preprocess(&grey, pbh, cwc)?;
        Ok(Registry {
            black,
            grey,
            black_enc,
            grey_enc,
        })
    }

    pub fn list(&self, kind: ListKind) -> &DeviceList {
        match kind {
            ListKind::Blacklist => &self.black,
            ListKind::Greylist => &self.grey,
        }
    }

    pub fn encoded(&self, kind: ListKind) -> &EncodedList {
        match kind {
            ListKind::Blacklist => &self.black_enc,
            ListKind::Greylist => &self.grey_enc,
        }
    }

    fn parts_mut(&mut self, kind: ListKind) -> (&mut DeviceList, &mut EncodedList, &DeviceList) {
        match kind {
            ListKind::Blacklist => (&mut self.black, &mut self.black_enc, &self.grey),
            ListKind::Greylist => (&mut self.grey, &mut self.grey_enc, &self.black),
        }
    }

    pub fn add_pei(&mut self, kind: ListKind, p: Pei) -> Result<(), Error> {
        let (list, enc, sibling) = self.parts_mut(kind);
        if sibling.contains(&p) {
            return Err(Error::Registry(format!("{p} is already on the {}", kind.other())));
        }
        if list.contains(&p) {
            return Err(Error::Registry(format!("duplicate entry {p}")));
        }
        enc.insert(p)?;
        list.entries.insert(p);
        Ok(())
    }

    pub fn remove_pei(&mut self, kind: ListKind, p: Pei) -> Result<(), Error> {
        let (list, enc, _) = self.parts_mut(kind);
        if !list.entries.remove(&p) {
            return Err(Error::Registry(format!("{p} is not on the {kind}")));
        }
        enc.remove(p)
    }

    /// Re-encodes dirty slots of both lists; returns touched rows per list.
    pub fn refresh(&mut self) -> Result<(Vec<usize>, Vec<usize>), Error> {
        Ok((self.black_enc.refresh()?, self.grey_enc.refresh()?))
    }

    /// Ground truth for a lookup.
    pub fn lookup(&self, p: &Pei) -> Option<ListKind> {
        if self.black.contains(p) {
            Some(ListKind::Blacklist)
        } else if self.grey.contains(p) {
            Some(ListKind::Greylist)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::PEI_BITS;

    fn params(slots: usize) -> (PbhParams, CwcParams) {
        let pbh = PbhParams::for_pei(slots, [9u8; 16]).unwrap();
        let cwc = CwcParams::minimal(PEI_BITS - slots.trailing_zeros(), 8).unwrap();
        (pbh, cwc)
    }

    #[test]
    fn random_lists_are_deterministic_and_distinct() {
        assert!(gen_random_list(ListKind::Blacklist, 0, 1).is_empty());
        let a = gen_random_list(ListKind::Blacklist, 1000, 7);
        let b = gen_random_list(ListKind::Blacklist, 1000, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        assert_ne!(a, gen_random_list(ListKind::Blacklist, 1000, 8));
    }

    #[test]
    fn disjoint_generation() {
        let (b, g, u) = gen_disjoint_lists(500, 300, 200, 3);
        assert_eq!((b.len(), g.len(), u.len()), (500, 300, 200));
        assert!(b.iter().all(|p| !g.contains(p) && !u.contains(p)));
        assert!(g.iter().all(|p| !u.contains(p)));
    }

    #[test]
    fn empty_list_has_no_rows() {
        let (pbh, cwc) = params(8192);
        let enc = EncodedList::preprocess(&DeviceList::new(ListKind::Blacklist), &pbh, &cwc).unwrap();
        assert_eq!(enc.row_count(), 0);
    }

    #[test]
    fn collisions_stack_into_rows() {
        let (pbh, cwc) = params(8192);
        // two identifiers with the same slot: pick residuals and invert
        let a = Pei::new(pbh.invert(17, 5)).unwrap();
        let b = Pei::new(pbh.invert(17, 3)).unwrap();
        let list = DeviceList::from_entries(ListKind::Blacklist, [a, b]).unwrap();
        let enc = EncodedList::preprocess(&list, &pbh, &cwc).unwrap();
        assert_eq!(enc.row_count(), 2);
        assert_eq!(enc.occupancy(17), 2);
        let read = |row| {
            let bits: Vec<bool> = (0..cwc.l as usize).map(|j| enc.bit(row, j, 17)).collect();
            cwc.decode(&crate::encoding::Codeword::from_bits(bits)).unwrap()
        };
        assert_eq!((read(0), read(1)), (3, 5));
        for row in 0..2 {
            for j in 0..cwc.l as usize {
                assert!(!enc.bit(row, j, 16) && !enc.bit(row, j, 18));
            }
        }
    }

    #[test]
    fn placement_at_16k_entries() {
        let (pbh, cwc) = params(8192);
        let list = gen_random_list(ListKind::Blacklist, 1 << 14, 11);
        let enc = EncodedList::preprocess(&list, &pbh, &cwc).unwrap();
        assert_eq!(enc.occupancies().iter().sum::<usize>(), 1 << 14);
        assert!(enc.row_count() <= 12, "rows {}", enc.row_count());
        // every occupied position carries a weight-h codeword
        let weight: usize = (0..enc.row_count())
            .map(|r| (0..cwc.l as usize).map(|j| enc.plane(r, j).iter().sum::<u64>() as usize).sum::<usize>())
            .sum();
        assert_eq!(weight, (1 << 14) * cwc.h as usize);
    }

    #[test]
    fn disjointness_and_inverse_updates() {
        let (pbh, cwc) = params(8192);
        let (b, g, u) = gen_disjoint_lists(100, 100, 10, 5);
        let mut reg = Registry::new(b.clone(), g.clone(), &pbh, &cwc).unwrap();
        let grey_member = *g.iter().next().unwrap();
        assert!(reg.add_pei(ListKind::Blacklist, grey_member).is_err());
        assert!(reg.add_pei(ListKind::Greylist, grey_member).is_err());
        let before = reg.encoded(ListKind::Blacklist).clone();
        reg.add_pei(ListKind::Blacklist, u[0]).unwrap();
        let (slot, _) = pbh.map(u[0].value()).unwrap();
        assert_eq!(reg.encoded(ListKind::Blacklist).dirty_slots().into_iter().collect::<Vec<_>>(), vec![slot]);
        reg.remove_pei(ListKind::Blacklist, u[0]).unwrap();
        reg.refresh().unwrap();
        assert_eq!(reg.list(ListKind::Blacklist), &b);
        assert_eq!(reg.encoded(ListKind::Blacklist), &before);
        assert!(reg.remove_pei(ListKind::Blacklist, u[1]).is_err());
        let both = DeviceList::from_entries(ListKind::Greylist, [*b.iter().next().unwrap()]).unwrap();
        assert!(Registry::new(b, both, &pbh, &cwc).is_err());
    }

    #[test]
    fn single_add_dirties_exactly_its_slot() {
        let (pbh, cwc) = params(8192);
        let list = gen_random_list(ListKind::Blacklist, 2000, 2);
        let mut enc = EncodedList::preprocess(&list, &pbh, &cwc).unwrap();
        let p = Pei::new(12_345_678_901_234).unwrap();
        enc.insert(p).unwrap();
        enc.refresh().unwrap();
        let mut entries: Vec<Pei> = list.iter().copied().collect();
        entries.push(p);
        let full = EncodedList::preprocess(&DeviceList::from_entries(ListKind::Blacklist, entries).unwrap(), &pbh, &cwc)
            .unwrap();
        let (slot, _) = pbh.map(p.value()).unwrap();
        let old = EncodedList::preprocess(&list, &pbh, &cwc).unwrap();
        // diff against the from-scratch encoding touches only that slot
        for r in 0..full.row_count() {
            for j in 0..cwc.l as usize {
                for s in 0..8192 {
                    let before = r < old.row_count() && old.bit(r, j, s);
                    if full.bit(r, j, s) != before {
                        assert_eq!(s, slot);
                    }
                }
            }
        }
        assert_eq!(enc, full);
    }

    #[test]
    fn list_file_roundtrip_and_diagnostics() {
        let dir = std::env::temp_dir().join(format!("peipsm-reg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("list.txt");
        let list = gen_random_list(ListKind::Greylist, 50, 4);
        write_list_file(&path, &list).unwrap();
        assert_eq!(read_list_file(&path, ListKind::Greylist).unwrap(), list);
        fs::write(&path, "35294906000000\n\n3529490600000x\n").unwrap();
        match read_list_file(&path, ListKind::Greylist) {
            Err(Error::ListFile { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "35294906000000\n35294906000000\n").unwrap();
        assert!(matches!(read_list_file(&path, ListKind::Greylist), Err(Error::ListFile { line: 2, .. })));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn cache_roundtrip_and_invalidation() {
        let dir = std::env::temp_dir().join(format!("peipsm-cache-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("planes.bin");
        let (pbh, cwc) = params(8192);
        let list = gen_random_list(ListKind::Blacklist, 3000, 6);
        let enc = EncodedList::preprocess(&list, &pbh, &cwc).unwrap();
        enc.save_cache(&path, &list).unwrap();
        assert_eq!(EncodedList::load_cache(&path, &list, &pbh, &cwc).unwrap().unwrap(), enc);
        let other_key = PbhParams::for_pei(8192, [1u8; 16]).unwrap();
        assert!(EncodedList::load_cache(&path, &list, &other_key, &cwc).unwrap().is_none());
        let other_list = gen_random_list(ListKind::Blacklist, 3000, 7);
        assert!(EncodedList::load_cache(&path, &other_list, &pbh, &cwc).unwrap().is_none());
        fs::remove_dir_all(&dir).unwrap();
    }
}
