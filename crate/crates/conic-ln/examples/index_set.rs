use conic_ln::index_set::build_index_chain;

fn main() -> conic_ln::Result<()> {
    let chain = build_index_chain(&[1.0, 2.0, 2.5], 5.0, 1e-9)?;
    println!("k1 = {}", chain.k1);
    for e in &chain.entries {
        println!("{:>5}  {:?}  resonant = {}", e.value, e.kind, e.resonant);
    }
    let m = chain.membership(3.2)?;
    println!("3.2 in set: {} (nearest {})", m.in_set, m.nearest);
    Ok(())
}
