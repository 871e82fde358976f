use super::{ex, list};
use pexsynth::dsl::{Example, Value};

pub fn case1_examples() -> Vec<Example> {
    vec![
        ex(vec![list(&[4, 5, 6, 2, 6, 2, 1, 6, 1, 4, 2, 5, 6, 3, 2, 2])], list(&[4, 12, 10, 8])),
        ex(vec![list(&[3, 2, 5, 0, 3, 2, 3, 0, 4, 1, 0, 2, 3, 0, 3, 4])], list(&[6, 0, 10, 4, 6])),
        ex(vec![list(&[1, 1, 4, 0, 0, 0, 0, 5, 0, 5, 3, 5])], list(&[2, 2])),
        ex(vec![list(&[4, 4, 1, 4, 4, 1, 4, 2, 2, 1, 3, 4])], list(&[4, 8, 2, 8, 8, 2, 8, 8])),
        // Printed with a stray empty element; read as 11 entries.
        ex(vec![list(&[4, 1, 1, 3, 3, 1, 4, 0, 4, 2, 4])], list(&[8, 2, 6, 6, 2, 2, 8])),
    ]
}

pub const CASE1_GLOBAL: &str = "a <- LIST
b <- ZIPWITH + a a
c <- TAIL b
d <- TAKE c b
e <- COUNT >0 d
f <- TAKE e d
g <- COUNT >0 f
h <- TAKE g f
i <- TAKE g h
j <- HEAD i
k <- TAKE j i
l <- TAKE j k
m <- TAKE j k
n <- TAKE j k
o <- REVERSE n";

pub const CASE1_P1: &str = "a <- LIST
b <- ZIPWITH + a a
c <- TAIL b
d <- TAKE c b
e <- REVERSE d";

pub const CASE1_P2: &str = "a <- LIST
b <- ZIPWITH + a a
c <- HEAD b
d <- TAKE c b
e <- COUNT >0 d
f <- TAKE e d
g <- REVERSE f";

pub fn case2_examples() -> Vec<Example> {
    vec![
        ex(vec![list(&[1, 0, 3, 3, 3]), Value::Int(35)], list(&[3, 1, 7])),
        ex(vec![list(&[6, 3, 3, 1, 2, 2, 0, 3, 8, 7]), Value::Int(50)], list(&[13, 7, 7])),
        ex(vec![list(&[1, 5, 6, 10, 5, 11, 7, 0, 7, 11, 10, 9, 4]), Value::Int(78)], list(&[3, 11, 13, 21, 11, 23, 15, 1, 15, 23])),
        ex(vec![list(&[12, 4, 11, 11, 4, 7, 12, 11, 11, 10, 5, 8, 9, 8]), Value::Int(166)], list(&[25, 9, 23, 23, 9, 15, 25, 23])),
        ex(vec![list(&[4, 0, 5, 5, 1, 1, 1, 1]), Value::Int(126)], list(&[9])),
    ]
}

/// As printed: lines e and f read `c`, an INT, where a list is required.
pub const CASE2_GLOBAL_PRINTED: &str = "a <- LIST
b <- INT
c <- MAXIMUM a
d <- TAKE c a
e <- TAIL c
f <- TAKE b c
g <- ZIPWITH + f f
h <- MAP +1 g
i <- TAKE e h";

pub const CASE2_GLOBAL: &str = "a <- LIST
b <- INT
c <- MAXIMUM a
d <- TAKE c a
e <- TAIL d
f <- TAKE b d
g <- ZIPWITH + f f
h <- MAP +1 g
i <- TAKE e h";

/// p1, p4 and p5 are the same program.
pub const CASE2_P1: &str = "a <- LIST
b <- INT
c <- TAIL a
d <- TAKE c a
e <- ZIPWITH + d d
f <- MAP +1 e";

pub const CASE2_P2: &str = "a <- LIST
b <- INT
c <- TAKE b a
d <- TAIL c
e <- ACCESS d c
f <- TAKE e c
g <- ZIPWITH + f f
h <- MAP +1 g";
