use std::sync::OnceLock;

const TRIANGLE_TABLE: &str = include_str!("../../data/mc_triangles.txt");

/// Edge-index triangle lists for the 256 corner-sign cases.
pub(super) fn triangles() -> &'static [Vec<u8>] {
    static TABLE: OnceLock<Vec<Vec<u8>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = vec![Vec::new(); 256];
        for line in TRIANGLE_TABLE.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (case, edges) = line.split_once(':').expect("table row has a case index");
            let case: usize = case.trim().parse().expect("case index");
            table[case] =
                edges.split_whitespace().map(|e| e.parse().expect("edge index")).collect();
        }
        table
    })
}
