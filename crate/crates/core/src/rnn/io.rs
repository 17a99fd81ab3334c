//! Binary weight files.
//!
//! Layout (little-endian): 8-byte magic, `u32` version, `u32` cell kind,
//! `u32` activation, `u32` output-ReLU flag, `u32` hidden size, `u32` input
//! features, `u32` frame length, `u64` parameter count, then the flat `f64`
//! parameters. A TOML sidecar (`<file>.toml`) repeats the dimensions for
//! humans and other tools.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Activation, CellKind, ModelDims, RnnModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 8] = *b"DSCERNN\0";
pub const MODEL_VERSION: u32 = 1;

fn kind_code(kind: CellKind) -> u32 {
    match kind {
        CellKind::Srnn => 0,
        CellKind::Lstm => 1,
        CellKind::Gru => 2,
    }
}

fn act_code(act: Activation) -> u32 {
    match act {
        Activation::Tanh => 0,
        Activation::Relu => 1,
    }
}

pub(crate) fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

/// Serializes a model to any writer.
pub fn write_model_to<W: Write>(model: &RnnModel, mut w: W) -> Result<()> {
    let d = model.dims();
    w.write_all(&MODEL_MAGIC)?;
    for v in [
        MODEL_VERSION,
        kind_code(d.kind),
        act_code(d.activation),
        d.output_relu as u32,
        d.hidden as u32,
        d.features as u32,
        d.frame_len as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(model.flat().len() as u64).to_le_bytes())?;
    for p in model.flat() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Deserializes a model written by [`write_model_to`].
pub fn read_model_from<R: Read>(mut r: R) -> Result<RnnModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let mut u32s = [0u32; 7];
    for v in &mut u32s {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    let [version, kind, act, relu, hidden, features, frame_len] = u32s;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let kind = match kind {
        0 => CellKind::Srnn,
        1 => CellKind::Lstm,
        2 => CellKind::Gru,
        k => return Err(Error::Format(format!("unknown cell code {k}"))),
    };
    let activation = match act {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        a => return Err(Error::Format(format!("unknown activation code {a}"))),
    };
    let dims = ModelDims {
        kind,
        hidden: hidden as usize,
        features: features as usize,
        frame_len: frame_len as usize,
        activation,
        output_relu: relu != 0,
    };
    dims.validate()?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    if count != dims.param_count() {
        return Err(Error::Format(format!(
            "parameter count {count} does not match dimensions ({})",
            dims.param_count()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        params.push(f64::from_le_bytes(b8));
    }
    if r.read(&mut b8)? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    RnnModel::from_parts(dims, params)
}

/// Writes the binary weights and a TOML sidecar next to them.
pub fn write_model(model: &RnnModel, path: &Path) -> Result<()> {
    write_model_to(model, BufWriter::new(File::create(path)?))?;
    #[derive(serde::Serialize)]
    struct Sidecar<'a> {
        format_version: u32,
        parameters: usize,
        dims: &'a ModelDims,
    }
    let meta = Sidecar { format_version: MODEL_VERSION, parameters: model.flat().len(), dims: model.dims() };
    let text = toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(sidecar_path(path), text)?;
    Ok(())
}

/// Reads a model written by [`write_model`]. The sidecar is not required.
pub fn read_model(path: &Path) -> Result<RnnModel> {
    read_model_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in CellKind::ALL {
            let mut dims = ModelDims::new(kind, 5, 3, 7).with_activation(Activation::Tanh);
            dims.output_relu = kind == CellKind::Gru;
            let mut m = RnnModel::init(dims, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            m.flat_mut()[0] = -0.0;
            m.flat_mut()[1] = f64::MIN_POSITIVE / 3.0;
            let mut buf = Vec::new();
            write_model_to(&m, &mut buf).unwrap();
            let back = read_model_from(&buf[..]).unwrap();
            assert_eq!(back.dims(), m.dims());
            let a: Vec<u64> = m.flat().iter().map(|p| p.to_bits()).collect();
            let b: Vec<u64> = back.flat().iter().map(|p| p.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        let m = RnnModel::zeros(ModelDims::new(CellKind::Srnn, 2, 1, 3)).unwrap();
        let mut buf = Vec::new();
        write_model_to(&m, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model_from(&bad[..]), Err(Error::Format(_))));
        assert!(read_model_from(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_model_from(&long[..]), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = std::env::temp_dir().join(format!("dsce-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.bin");
        let m = RnnModel::init(ModelDims::new(CellKind::Lstm, 3, 2, 4), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        write_model(&m, &path).unwrap();
        assert_eq!(read_model(&path).unwrap(), m);
        let side = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(side.contains("kind = \"lstm\""));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
