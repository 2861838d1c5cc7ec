fn main() {
    println!("kbd");
}
