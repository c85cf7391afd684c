//! Home of the `acceptance` test binary, which runs the end-to-end
//! acceptance criteria against the shipped presets. The library is empty.
