fn main() {
    // placeholder until the bench suite lands
}
