fn main() {
    println!("flatkit");
}
