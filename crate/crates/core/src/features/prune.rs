//! Removal of self-similar descriptors within one image.

use super::orb::BinaryDescriptor;

/// Drops every descriptor that has another descriptor of the same set within
/// `tau` bits. Both members of a close pair go, so a repeated structure
/// leaves no representative behind.
pub fn prune_self_similar(descs: &[BinaryDescriptor], tau: u32) -> Vec<BinaryDescriptor> {
    let n = descs.len();
    let mut close = vec![false; n];
    for i in 0..n {
        for j in i + 1..n {
            if descs[i].distance(&descs[j]) <= tau {
                close[i] = true;
                close[j] = true;
            }
        }
    }
    descs
        .iter()
        .zip(close)
        .filter(|(_, c)| !c)
        .map(|(d, _)| *d)
        .collect()
}
