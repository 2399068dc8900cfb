mod common;

use common::checks::adapter_partition;

#[test]
fn adapter_prompts_partition_by_layer() {
    let (layers, rows, dev) = adapter_partition(10, 4, 16, 1);
    assert_eq!(layers, 4);
    assert_eq!(rows, vec![10; 4]);
    assert!(dev < 1e-12, "{dev}");
    for (m, n) in [(1, 1), (3, 5), (7, 2), (2, 6)] {
        let (layers, rows, dev) = adapter_partition(m, n, 8, (m * 10 + n) as u64);
        assert_eq!(layers, n);
        assert_eq!(rows.iter().sum::<usize>(), m * n);
        assert!(rows.iter().all(|&r| r == m * n / n));
        assert!(dev < 1e-12, "{dev}");
    }
}
