//! Interface checks that any extractor or generator adapter must pass.

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::styles::sample_standard_normal;
use crate::types::{Band, LatentVector, StyleStack, TransformMatrix};

use super::{Extractor, Generator};

fn fail(msg: String) -> Error {
    Error::BackendContract(msg)
}

/// Shapes match `list_layers`, exactly the requested layers come back, and
/// identical frames give identical maps.
pub fn check_extractor(extractor: &mut dyn Extractor, frame: &Frame) -> Result<()> {
    let table = extractor.list_layers();
    if table.is_empty() {
        return Err(fail(format!("{} lists no layers", extractor.id())));
    }
    for spec in &table {
        if spec.channels == 0 || spec.rows == 0 || spec.cols == 0 {
            return Err(fail(format!("layer {} has an empty dimension", spec.name)));
        }
    }
    // Small layers only, so real adapters stay cheap to check.
    let requested: Vec<String> = table
        .iter()
        .filter(|l| l.rows * l.cols <= 32 * 32)
        .take(2)
        .map(|l| l.name.clone())
        .collect();
    let first = extractor.extract(frame, &requested)?;
    let second = extractor.extract(frame, &requested)?;
    if first.len() != requested.len() || requested.iter().any(|n| !first.contains_key(n)) {
        return Err(fail("extract did not return exactly the requested layers".into()));
    }
    for name in &requested {
        let spec = table.iter().find(|l| &l.name == name).expect("requested from table");
        let map = &first[name];
        if (map.channels(), map.rows(), map.cols()) != (spec.channels, spec.rows, spec.cols) {
            return Err(fail(format!("layer {name} shape differs from list_layers")));
        }
        if map != &second[name] {
            return Err(fail(format!("layer {name} is not deterministic")));
        }
    }
    Ok(())
}

/// Mapping and synthesis are deterministic, output size is fixed, and the
/// advertised capabilities are honored.
pub fn check_generator(generator: &mut dyn Generator) -> Result<()> {
    let z = LatentVector::new(sample_standard_normal(17, generator.z_dim()))?;
    let w1 = generator.map(&z)?;
    let w2 = generator.map(&z)?;
    if w1.values() != w2.values() || w1.dim() != generator.w_dim() {
        return Err(fail("map is not deterministic or has the wrong dimension".into()));
    }
    if generator.w_avg().dim() != generator.w_dim() {
        return Err(fail("w_avg has the wrong dimension".into()));
    }
    let stack = StyleStack::repeated(&w1.with_band(Band::Static), generator.num_ws());
    let a = generator.synthesize(&stack)?;
    let b = generator.synthesize(&stack)?;
    if a != b {
        return Err(fail("synthesize is not deterministic".into()));
    }
    if (a.width(), a.height()) != generator.output_size() {
        return Err(fail("synthesize output differs from output_size".into()));
    }
    let caps = generator.capabilities();
    match generator.constant() {
        Ok(c) if caps.constant_access => generator.set_constant(c)?,
        Ok(_) => return Err(fail("constant exposed without the capability flag".into())),
        Err(_) if caps.constant_access => {
            return Err(fail("constant capability advertised but not provided".into()))
        }
        Err(_) => {}
    }
    match generator.set_input_transform(TransformMatrix::IDENTITY) {
        Ok(()) if !caps.affine_access => {
            return Err(fail("input transform accepted without the capability flag".into()))
        }
        Err(_) if caps.affine_access => {
            return Err(fail("affine capability advertised but not provided".into()))
        }
        _ => {}
    }
    Ok(())
}
