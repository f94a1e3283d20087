use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Role {
    Seller,
    Buyer,
}

impl Role {
    pub fn outbound(self) -> Direction {
        match self {
            Role::Seller => Direction::SellerToBuyer,
            Role::Buyer => Direction::BuyerToSeller,
        }
    }

    pub fn inbound(self) -> Direction {
        self.outbound().reverse()
    }

    pub fn code(self) -> u8 {
        match self {
            Role::Seller => 1,
            Role::Buyer => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Role::Seller),
            2 => Some(Role::Buyer),
            _ => None,
        }
    }
}

/// Direction in which information travels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Direction {
    #[serde(rename = "S->B")]
    SellerToBuyer,
    #[serde(rename = "B->S")]
    BuyerToSeller,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::SellerToBuyer, Direction::BuyerToSeller];

    pub fn reverse(self) -> Self {
        match self {
            Direction::SellerToBuyer => Direction::BuyerToSeller,
            Direction::BuyerToSeller => Direction::SellerToBuyer,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::SellerToBuyer => "S->B",
            Direction::BuyerToSeller => "B->S",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
