//! Triangle-mesh ingestion: ASCII OBJ and PLY parsers, boundary detection
//! from edge/face incidence, and the pipeline that turns a scanned mesh
//! into a [`GraphSample`] (recenter, subsample, kNN, Gaussian bump as the
//! initial field, uniform diffusivity 0.05).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{
    build_knn_graph, edge_weights_inverse_distance, GraphSample, Metadata,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::Invalid(format!("face {i} references missing vertex")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Invalid(format!("face {i} is degenerate")));
            }
        }
        Ok(())
    }
}

fn parse_coord(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("bad coordinate '{tok}'"),
    })
}

/// Parse Wavefront OBJ text. Only `v` and `f` records are honored; faces
/// with more than three vertices are fan-triangulated; `f` vertex entries
/// may carry `/vt/vn` suffixes, which are ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let tok = toks.next().ok_or(Error::Parse {
                        line,
                        msg: "vertex needs three coordinates".into(),
                    })?;
                    *slot = parse_coord(tok, line)?;
                }
                vertices.push(c);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in toks {
                    let vtok = tok.split('/').next().unwrap_or("");
                    let v: i64 = vtok.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad face index '{tok}'"),
                    })?;
                    if v < 1 || v as usize > vertices.len() {
                        return Err(Error::Parse {
                            line,
                            msg: format!("face index {v} out of range"),
                        });
                    }
                    idx.push((v - 1) as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        msg: "face needs at least three vertices".into(),
                    });
                }
                for i in 1..idx.len() - 1 {
                    push_face(&mut faces, [idx[0], idx[i], idx[i + 1]], line)?;
                }
            }
            _ => {} // comments, vt/vn, groups, materials
        }
    }
    let mesh = TriangleMesh { vertices, faces };
    mesh.validate()?;
    Ok(mesh)
}

fn push_face(faces: &mut Vec<[usize; 3]>, f: [usize; 3], line: usize) -> Result<()> {
    if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
        return Err(Error::Parse {
            line,
            msg: "degenerate face (repeated vertex)".into(),
        });
    }
    faces.push(f);
    Ok(())
}

/// Parse ASCII PLY text. The vertex element must carry scalar x, y, z
/// properties; the face element must consist of a single list property.
/// Binary formats are rejected.
pub fn parse_ply(text: &str) -> Result<TriangleMesh> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    let (_, magic) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
    if magic != "ply" {
        return Err(Error::Parse { line: 1, msg: "missing ply magic".into() });
    }

    struct ElementDecl {
        name: String,
        count: usize,
        props: Vec<(String, bool)>, // (name, is_list)
    }
    let mut elements: Vec<ElementDecl> = Vec::new();
    let mut format_seen = false;
    let mut header_end = 0;

    for (line, raw) in lines.by_ref() {
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unsupported format '{}', only ascii 1.0", toks.get(1).unwrap_or(&"?")),
                    });
                }
                format_seen = true;
            }
            Some("element") => {
                let name = toks.get(1).ok_or(Error::Parse { line, msg: "element needs a name".into() })?;
                let count: usize = toks
                    .get(2)
                    .and_then(|t| t.parse().ok())
                    .ok_or(Error::Parse { line, msg: "element needs a count".into() })?;
                elements.push(ElementDecl { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or(Error::Parse {
                    line,
                    msg: "property before any element".into(),
                })?;
                if toks.get(1) == Some(&"list") {
                    let name = toks.last().unwrap_or(&"").to_string();
                    el.props.push((name, true));
                } else {
                    let name = toks.last().unwrap_or(&"").to_string();
                    el.props.push((name, false));
                }
            }
            Some("comment") | Some("obj_info") => {}
            Some("end_header") => {
                header_end = line;
                break;
            }
            Some(other) => {
                return Err(Error::Parse { line, msg: format!("unexpected header record '{other}'") });
            }
            None => {}
        }
    }
    if header_end == 0 {
        return Err(Error::Parse { line: 1, msg: "header never ends".into() });
    }
    if !format_seen {
        return Err(Error::Parse { line: 1, msg: "missing format line".into() });
    }

    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                if el.props.iter().any(|(_, is_list)| *is_list) {
                    return Err(Error::Parse {
                        line: header_end,
                        msg: "list properties on vertices are unsupported".into(),
                    });
                }
                let pos = |want: &str| el.props.iter().position(|(n, _)| n == want);
                let (xi, yi, zi) = match (pos("x"), pos("y"), pos("z")) {
                    (Some(a), Some(b), Some(c)) => (a, b, c),
                    _ => {
                        return Err(Error::Parse {
                            line: header_end,
                            msg: "vertex element lacks x/y/z properties".into(),
                        })
                    }
                };
                for _ in 0..el.count {
                    let (line, raw) = lines.next().ok_or(Error::Parse {
                        line: header_end,
                        msg: "file ends inside vertex data".into(),
                    })?;
                    let toks: Vec<&str> = raw.split_whitespace().collect();
                    if toks.len() < el.props.len() {
                        return Err(Error::Parse { line, msg: "short vertex row".into() });
                    }
                    vertices.push([
                        parse_coord(toks[xi], line)?,
                        parse_coord(toks[yi], line)?,
                        parse_coord(toks[zi], line)?,
                    ]);
                }
            }
            "face" => {
                if el.props.len() != 1 || !el.props[0].1 {
                    return Err(Error::Parse {
                        line: header_end,
                        msg: "face element must be a single list property".into(),
                    });
                }
                for _ in 0..el.count {
                    let (line, raw) = lines.next().ok_or(Error::Parse {
                        line: header_end,
                        msg: "file ends inside face data".into(),
                    })?;
                    let toks: Vec<&str> = raw.split_whitespace().collect();
                    let cnt: usize = toks
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or(Error::Parse { line, msg: "bad face count".into() })?;
                    if toks.len() != cnt + 1 {
                        return Err(Error::Parse { line, msg: "face row length mismatch".into() });
                    }
                    if cnt < 3 {
                        return Err(Error::Parse { line, msg: "face needs at least three vertices".into() });
                    }
                    let mut idx = Vec::with_capacity(cnt);
                    for t in &toks[1..] {
                        let v: usize = t.parse().map_err(|_| Error::Parse {
                            line,
                            msg: format!("bad face index '{t}'"),
                        })?;
                        if v >= vertices.len() {
                            return Err(Error::Parse {
                                line,
                                msg: format!("face index {v} out of range"),
                            });
                        }
                        idx.push(v);
                    }
                    for i in 1..idx.len() - 1 {
                        push_face(&mut faces, [idx[0], idx[i], idx[i + 1]], line)?;
                    }
                }
            }
            _ => {
                // skip data rows of elements we do not model
                for _ in 0..el.count {
                    lines.next();
                }
            }
        }
    }

    let mesh = TriangleMesh { vertices, faces };
    mesh.validate()?;
    Ok(mesh)
}

/// A vertex is boundary when it touches an edge used by exactly one face.
pub fn detect_boundary_vertices(mesh: &TriangleMesh) -> Vec<bool> {
    let mut edge_faces: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[0], f[2])] {
            *edge_faces.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let mut boundary = vec![false; mesh.vertices.len()];
    for (&(a, b), &cnt) in &edge_faces {
        if cnt == 1 {
            boundary[a] = true;
            boundary[b] = true;
        }
    }
    boundary
}

/// Subtract the centroid, then apply the rotation if given. The rotation
/// must be orthogonal to 1e-8 (max-abs of RᵀR - I).
pub fn recenter_and_rotate(
    vertices: &[[f64; 3]],
    rotation: Option<&[[f64; 3]; 3]>,
) -> Result<Vec<[f64; 3]>> {
    if vertices.is_empty() {
        return Err(Error::InsufficientNodes { have: 0, need: 1 });
    }
    if let Some(r) = rotation {
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += r[k][i] * r[k][j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-8 {
                    return Err(Error::Invalid("rotation matrix is not orthogonal".into()));
                }
            }
        }
    }
    let n = vertices.len() as f64;
    let mut mean = [0.0; 3];
    for v in vertices {
        for c in 0..3 {
            mean[c] += v[c] / n;
        }
    }
    let out = vertices
        .iter()
        .map(|v| {
            let centered = [v[0] - mean[0], v[1] - mean[1], v[2] - mean[2]];
            match rotation {
                None => centered,
                Some(r) => {
                    let mut rot = [0.0; 3];
                    for (i, row) in r.iter().enumerate() {
                        rot[i] = row[0] * centered[0] + row[1] * centered[1] + row[2] * centered[2];
                    }
                    rot
                }
            }
        })
        .collect();
    Ok(out)
}

/// Choose m of n indices uniformly without replacement (partial
/// Fisher-Yates), returned in ascending order.
pub fn subsample_vertices(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m > n {
        return Err(Error::Invalid(format!("cannot subsample {m} of {n} vertices")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    let mut picked = pool[..m].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Gaussian bump centered on the centroid, scaled so the farthest point
/// carries exp(-20): u(x) = exp(-20 |x - c|^2 / max_j |x_j - c|^2).
pub fn gaussian_initial_condition(positions: &[[f64; 3]]) -> Result<Vec<f64>> {
    if positions.is_empty() {
        return Err(Error::InsufficientNodes { have: 0, need: 1 });
    }
    let n = positions.len() as f64;
    let mut mean = [0.0; 3];
    for p in positions {
        for c in 0..3 {
            mean[c] += p[c] / n;
        }
    }
    let r2: Vec<f64> = positions
        .iter()
        .map(|p| {
            let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
        })
        .collect();
    let max_r2 = r2.iter().cloned().fold(0.0f64, f64::max);
    if max_r2 <= 0.0 {
        return Err(Error::DegenerateGeometry("all points coincide".into()));
    }
    Ok(r2.iter().map(|&r| (-20.0 * r / max_r2).exp()).collect())
}

/// Full ingestion pipeline for a scanned mesh: recenter, detect boundary on
/// the full mesh, subsample m vertices, connect with kNN, inverse-distance
/// weights, Gaussian initial bump, uniform diffusivity 0.05.
pub fn realmesh_to_graphsample(
    mesh: &TriangleMesh,
    m: usize,
    k: usize,
    seed: u64,
    name: &str,
) -> Result<GraphSample> {
    mesh.validate()?;
    let recentered = recenter_and_rotate(&mesh.vertices, None)?;
    let full_boundary = detect_boundary_vertices(mesh);
    let picked = subsample_vertices(recentered.len(), m, seed)?;

    let positions: Vec<[f64; 3]> = picked.iter().map(|&i| recentered[i]).collect();
    let boundary_mask: Vec<bool> = picked.iter().map(|&i| full_boundary[i]).collect();
    let edges = build_knn_graph(&positions, k)?;
    let weights = edge_weights_inverse_distance(&positions, &edges);
    let u0 = gaussian_initial_condition(&positions)?;

    let sample = GraphSample {
        diffusivity: vec![0.05; positions.len()],
        positions,
        edges,
        weights,
        boundary_mask,
        u0,
        metadata: Metadata {
            name: name.into(),
            seed,
            k,
            provenance: "meshio".into(),
        },
    };
    sample.validate()?;
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUAD_OBJ: &str = "\
# a unit quad
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
f 1 2 3 4
";

    #[test]
    fn obj_quad_fan_triangulates() {
        let mesh = parse_obj(QUAD_OBJ).unwrap();
        assert_eq!(mesh.vertices.len(), 4);
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_slash_forms_are_accepted() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\n";
        let mesh = parse_obj(text).unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn obj_errors_carry_line_numbers() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n";
        match parse_obj(text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("out of range"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_obj("v 0 0\n") {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn obj_rejects_degenerate_faces() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\n";
        assert!(matches!(parse_obj(text), Err(Error::Parse { line: 4, .. })));
    }

    const CUBE_PLY: &str = "\
ply
format ascii 1.0
comment made by hand
element vertex 4
property float x
property float y
property float z
property float confidence
element face 2
property list uchar int vertex_indices
end_header
0 0 0 0.9
1 0 0 0.9
1 1 0 0.9
0 1 0 0.9
3 0 1 2
3 0 2 3
";

    #[test]
    fn ply_parses_with_extra_vertex_properties() {
        let mesh = parse_ply(CUBE_PLY).unwrap();
        assert_eq!(mesh.vertices.len(), 4);
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(mesh.vertices[2], [1.0, 1.0, 0.0]);
    }

    #[test]
    fn ply_rejects_binary() {
        let text = "ply\nformat binary_little_endian 1.0\nend_header\n";
        match parse_ply(text) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("ascii")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn ply_polygons_fan_triangulate() {
        let text = "\
ply
format ascii 1.0
element vertex 5
property float x
property float y
property float z
element face 1
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
1 1 0
0.5 1.5 0
0 1 0
5 0 1 2 3 4
";
        let mesh = parse_ply(text).unwrap();
        assert_eq!(mesh.faces.len(), 3);
        assert_eq!(mesh.faces[0], [0, 1, 2]);
        assert_eq!(mesh.faces[2], [0, 3, 4]);
    }

    #[test]
    fn open_strip_has_all_boundary_and_tetrahedron_none() {
        let strip = parse_obj(QUAD_OBJ).unwrap();
        let b = detect_boundary_vertices(&strip);
        assert_eq!(b, vec![true, true, true, true]);

        let tet = "\
v 0 0 0
v 1 0 0
v 0 1 0
v 0 0 1
f 1 2 3
f 1 2 4
f 1 3 4
f 2 3 4
";
        let mesh = parse_obj(tet).unwrap();
        let b = detect_boundary_vertices(&mesh);
        assert_eq!(b, vec![false; 4]);
    }

    #[test]
    fn recenter_zeroes_the_mean_and_checks_rotations() {
        let pts = vec![[1.0, 2.0, 3.0], [3.0, 0.0, 1.0], [2.0, 4.0, -1.0]];
        let out = recenter_and_rotate(&pts, None).unwrap();
        for c in 0..3 {
            let mean: f64 = out.iter().map(|p| p[c]).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-10);
        }
        // 90 degree rotation about z
        let rot = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let rotated = recenter_and_rotate(&pts, Some(&rot)).unwrap();
        assert!((rotated[0][0] - -out[0][1]).abs() < 1e-12);
        assert!((rotated[0][1] - out[0][0]).abs() < 1e-12);

        let skew = [[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(recenter_and_rotate(&pts, Some(&skew)).is_err());
    }

    #[test]
    fn subsample_is_deterministic_and_exact() {
        let a = subsample_vertices(100, 10, 5).unwrap();
        let b = subsample_vertices(100, 10, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let mut sorted = a.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        assert!(a.iter().all(|&i| i < 100));
        assert!(subsample_vertices(5, 6, 0).is_err());
        // full take returns everything
        assert_eq!(subsample_vertices(4, 4, 9).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn gaussian_bump_peaks_at_center_and_rejects_coincident_points() {
        let pts = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
        ];
        let u = gaussian_initial_condition(&pts).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-15, "centroid point carries the peak");
        for &v in &u[1..] {
            assert!((v - (-20.0f64).exp()).abs() < 1e-15);
        }
        assert!(matches!(
            gaussian_initial_condition(&[[1.0, 1.0, 1.0]; 4]),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn ingestion_pipeline_produces_a_valid_sample() {
        // 6x6 planar grid of two-triangle cells
        let mut obj = String::new();
        for y in 0..6 {
            for x in 0..6 {
                obj.push_str(&format!("v {} {} 0\n", x as f64 * 0.2, y as f64 * 0.2));
            }
        }
        for y in 0..5 {
            for x in 0..5 {
                let a = y * 6 + x + 1;
                let (b, c, d) = (a + 1, a + 7, a + 6);
                obj.push_str(&format!("f {a} {b} {c}\nf {a} {c} {d}\n"));
            }
        }
        let mesh = parse_obj(&obj).unwrap();
        let sample = realmesh_to_graphsample(&mesh, 20, 4, 1, "grid").unwrap();
        sample.validate().unwrap();
        assert_eq!(sample.n_nodes(), 20);
        assert_eq!(sample.diffusivity, vec![0.05; 20]);
        assert_eq!(sample.metadata.provenance, "meshio");
        // grid border vertices are boundary; at least one survives sampling
        assert!(sample.boundary_mask.iter().any(|&b| b));
        assert!(sample.boundary_mask.iter().any(|&b| !b));
        // interior boundary flags come from the full mesh, not the subsample
        let full_boundary = detect_boundary_vertices(&mesh);
        let picked = subsample_vertices(36, 20, 1).unwrap();
        for (slot, &orig) in picked.iter().enumerate() {
            assert_eq!(sample.boundary_mask[slot], full_boundary[orig]);
        }
    }
}
