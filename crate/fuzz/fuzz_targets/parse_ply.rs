#![no_main]

use burnscope::mesh::{parse_ply, write_ply};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ply) = parse_ply(text) {
        let again = parse_ply(&write_ply(
            &ply.mesh,
            ply.face_probability.as_deref(),
            ply.vertex_depth.as_deref(),
        ))
        .expect("written PLY must parse");
        assert_eq!(again.mesh.faces, ply.mesh.faces);
        assert_eq!(again.mesh.vertices.len(), ply.mesh.vertices.len());
    }
});
