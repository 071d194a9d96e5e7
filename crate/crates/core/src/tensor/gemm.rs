/// Panics unless a `rows × cols` strided view fits inside a buffer of `len`.
pub(super) fn check_extent(rows: usize, cols: usize, len: usize, strides: (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    assert!(strides.0 >= 0 && strides.1 >= 0, "negative gemm strides are not supported");
    let last = (rows - 1) * strides.0 as usize + (cols - 1) * strides.1 as usize;
    assert!(last < len, "gemm view {rows}x{cols} with strides {strides:?} overruns buffer of {len}");
}
