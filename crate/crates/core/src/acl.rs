// SPDX-License-Identifier: Apache-2.0

//! Role-based access control. Rules only allow; anything unmatched is denied.
//!
//! Object patterns in rules:
//!
//! | pattern          | matches                                   |
//! |------------------|-------------------------------------------|
//! | `*`              | everything                                |
//! | `s` or `s.*`     | schema `s` and every table in it          |
//! | `s.t`            | table `s.t`                               |
//! | `procedure:p`    | procedure `p`                             |
//! | `procedure:*`    | every procedure                           |

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::journal::JournalOp;
use crate::provenance::SYS_SCHEMA;
use crate::store::{ColumnDef, Database, TableDef, TableRef};
use crate::value::{Cells, Value, ValueKind};

pub const USERS_TABLE: &str = "users";
pub const ACL_TABLE: &str = "acl";
pub const ADMIN_USER: &str = "admin";
pub const ADMIN_ROLE: &str = "admin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Read,
    Write,
    Execute,
    Admin,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Read, Action::Write, Action::Execute, Action::Admin];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Read => "Read",
            Action::Write => "Write",
            Action::Execute => "Execute",
            Action::Admin => "Admin",
        }
    }

    /// Whether holding `self` grants `wanted`.
    pub fn grants(self, wanted: Action) -> bool {
        self == Action::Admin || self == wanted
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Malformed(format!("unknown action {s:?}")))
    }
}

/// A concrete thing being accessed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Object {
    /// The whole system: user and grant management.
    System,
    Schema(String),
    Table(TableRef),
    Procedure(String),
}

impl fmt::Display for Object {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Object::System => f.write_str("*"),
            Object::Schema(s) => f.write_str(s),
            Object::Table(t) => write!(f, "{t}"),
            Object::Procedure(p) => write!(f, "procedure:{p}"),
        }
    }
}

/// Whether a rule's object pattern covers `obj`.
pub fn pattern_matches(pattern: &str, obj: &Object) -> bool {
    if pattern == "*" {
        return true;
    }
    if let Some(p) = pattern.strip_prefix("procedure:") {
        return matches!(obj, Object::Procedure(name) if p == "*" || p == name);
    }
    let (schema, table) = match pattern.split_once('.') {
        Some((s, t)) => (s, Some(t)),
        None => (pattern, None),
    };
    match (obj, table) {
        (Object::Schema(s), None | Some("*")) => s == schema,
        (Object::Table(t), None | Some("*")) => t.schema == schema,
        (Object::Table(t), Some(name)) => t.schema == schema && t.name == name,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclRule {
    pub role: String,
    pub object: String,
    pub action: Action,
}

impl AclRule {
    pub fn new(role: &str, object: &str, action: Action) -> Self {
        AclRule {
            role: role.to_owned(),
            object: object.to_owned(),
            action,
        }
    }

    fn to_cells(&self) -> Cells {
        let mut c = Cells::new();
        c.insert("role".into(), Value::from(self.role.as_str()));
        c.insert("object".into(), Value::from(self.object.as_str()));
        c.insert("action".into(), Value::from(self.action.as_str()));
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserIdentity {
    pub user_id: String,
    pub roles: BTreeSet<String>,
}

impl UserIdentity {
    pub fn new<'a>(user_id: &str, roles: impl IntoIterator<Item = &'a str>) -> Self {
        UserIdentity {
            user_id: user_id.to_owned(),
            roles: roles.into_iter().map(str::to_owned).collect(),
        }
    }

    pub fn is_admin(&self) -> bool {
        self.roles.contains(ADMIN_ROLE)
    }

    fn to_cells(&self) -> Cells {
        let roles: Vec<&str> = self.roles.iter().map(String::as_str).collect();
        let mut c = Cells::new();
        c.insert("user_id".into(), Value::from(self.user_id.as_str()));
        c.insert("roles".into(), Value::from(roles.join(",").as_str()));
        c
    }
}

/// Pure decision: does any rule for one of the user's roles allow this?
pub fn check_access(user: &UserIdentity, rules: &[AclRule], object: &Object, action: Action) -> bool {
    rules
        .iter()
        .any(|r| user.roles.contains(&r.role) && r.action.grants(action) && pattern_matches(&r.object, object))
}

pub fn users_ref() -> TableRef {
    TableRef::new(SYS_SCHEMA, USERS_TABLE)
}

pub fn acl_ref() -> TableRef {
    TableRef::new(SYS_SCHEMA, ACL_TABLE)
}

fn users_def() -> TableDef {
    TableDef::new(
        SYS_SCHEMA,
        USERS_TABLE,
        vec![
            ColumnDef::new("user_id", ValueKind::Text).primary_key(),
            ColumnDef::new("roles", ValueKind::Text).not_null(),
        ],
    )
}

fn acl_def() -> TableDef {
    TableDef::new(
        SYS_SCHEMA,
        ACL_TABLE,
        vec![
            ColumnDef::new("role", ValueKind::Text).not_null(),
            ColumnDef::new("object", ValueKind::Text).not_null(),
            ColumnDef::new("action", ValueKind::Text)
                .not_null()
                .check("action = 'Read' OR action = 'Write' OR action = 'Execute' OR action = 'Admin'"),
        ],
    )
}

/// Tables and seed rows created with the provenance log: the admin user
/// holding Admin on everything.
pub(crate) fn bootstrap_ops() -> Vec<JournalOp> {
    vec![
        JournalOp::CreateTable { def: users_def() },
        JournalOp::CreateTable { def: acl_def() },
        JournalOp::Insert {
            table: users_ref(),
            row_id: 1,
            cells: UserIdentity::new(ADMIN_USER, [ADMIN_ROLE]).to_cells(),
        },
        JournalOp::Insert {
            table: acl_ref(),
            row_id: 1,
            cells: AclRule::new(ADMIN_ROLE, "*", Action::Admin).to_cells(),
        },
    ]
}

pub fn user_cells(user: &UserIdentity) -> Cells {
    user.to_cells()
}

pub fn rule_cells(rule: &AclRule) -> Cells {
    rule.to_cells()
}

/// Looks a user up in `sys.users`.
pub fn load_user(db: &Database, user_id: &str) -> Result<UserIdentity> {
    let t = db.table(&users_ref()).map_err(|_| Error::NotInitialized)?;
    let id = t
        .lookup_unique("user_id", &Value::from(user_id))
        .flatten()
        .ok_or_else(|| Error::UnknownUser(user_id.to_owned()))?;
    let roles = t
        .get(id)
        .and_then(|c| c.get("roles"))
        .and_then(Value::as_str)
        .unwrap_or("");
    Ok(UserIdentity::new(
        user_id,
        roles.split(',').map(str::trim).filter(|r| !r.is_empty()),
    ))
}

pub fn load_rules(db: &Database) -> Result<Vec<AclRule>> {
    let t = db.table(&acl_ref()).map_err(|_| Error::NotInitialized)?;
    let text = |c: &Cells, k: &str| c.get(k).and_then(Value::as_str).unwrap_or("").to_owned();
    t.rows()
        .map(|(_, c)| {
            Ok(AclRule {
                role: text(c, "role"),
                object: text(c, "object"),
                action: text(c, "action").parse()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes() -> Object {
        Object::Table(TableRef::new("compute", "Nodes"))
    }

    #[test]
    fn admin_allows_everything() {
        let admin = UserIdentity::new("root", [ADMIN_ROLE]);
        let rules = [AclRule::new(ADMIN_ROLE, "*", Action::Admin)];
        for obj in [
            nodes(),
            Object::System,
            Object::Procedure("p".into()),
            Object::Schema("s".into()),
        ] {
            for a in Action::ALL {
                assert!(check_access(&admin, &rules, &obj, a));
            }
        }
    }

    #[test]
    fn read_does_not_grant_write() {
        let u = UserIdentity::new("ops", ["viewer"]);
        let rules = [AclRule::new("viewer", "compute.Nodes", Action::Read)];
        assert!(check_access(&u, &rules, &nodes(), Action::Read));
        assert!(!check_access(&u, &rules, &nodes(), Action::Write));
    }

    #[test]
    fn empty_acl_denies() {
        let u = UserIdentity::new("ops", ["viewer"]);
        for a in Action::ALL {
            assert!(!check_access(&u, &[], &nodes(), a));
        }
    }

    #[test]
    fn pattern_table() {
        let cases = [
            ("*", nodes(), true),
            ("compute", nodes(), true),
            ("compute.*", nodes(), true),
            ("compute.Nodes", nodes(), true),
            ("compute.Other", nodes(), false),
            ("lb.*", nodes(), false),
            ("compute.*", Object::Schema("compute".into()), true),
            ("compute.Nodes", Object::Schema("compute".into()), false),
            ("procedure:*", Object::Procedure("x".into()), true),
            ("procedure:x", Object::Procedure("x".into()), true),
            ("procedure:y", Object::Procedure("x".into()), false),
            ("procedure:*", nodes(), false),
            ("compute", Object::System, false),
        ];
        for (p, obj, want) in cases {
            assert_eq!(pattern_matches(p, &obj), want, "{p} vs {obj}");
        }
    }

    /// Enumerates every ACL of up to two rules over a small universe and
    /// compares the matcher with a direct reading of the rule semantics.
    #[test]
    fn matcher_agrees_with_oracle_on_small_acls() {
        let roles = ["a", "b"];
        let patterns = [
            "*",
            "compute",
            "compute.*",
            "compute.Nodes",
            "lb.*",
            "procedure:*",
            "procedure:p",
        ];
        let objects = [
            nodes(),
            Object::Table(TableRef::new("lb", "LoadBalancers")),
            Object::Schema("compute".into()),
            Object::Procedure("p".into()),
            Object::Procedure("q".into()),
            Object::System,
        ];
        let covers = |pattern: &str, obj: &Object| -> bool {
            match (pattern, obj) {
                ("*", _) => true,
                ("compute" | "compute.*", Object::Schema(s)) => s == "compute",
                ("compute" | "compute.*", Object::Table(t)) => t.schema == "compute",
                ("compute.Nodes", Object::Table(t)) => t.schema == "compute" && t.name == "Nodes",
                ("lb.*", Object::Table(t)) => t.schema == "lb",
                ("lb.*", Object::Schema(s)) => s == "lb",
                ("procedure:*", Object::Procedure(_)) => true,
                ("procedure:p", Object::Procedure(p)) => p == "p",
                _ => false,
            }
        };
        let mut single = Vec::new();
        for r in roles {
            for p in patterns {
                for a in Action::ALL {
                    single.push(AclRule::new(r, p, a));
                }
            }
        }
        let user = UserIdentity::new("u", ["a"]);
        let mut checked = 0;
        for (i, r1) in single.iter().enumerate() {
            for r2 in &single[i..] {
                let rules = [r1.clone(), r2.clone()];
                for obj in &objects {
                    for a in Action::ALL {
                        let want = rules.iter().any(|r| {
                            r.role == "a" && (r.action == a || r.action == Action::Admin) && covers(&r.object, obj)
                        });
                        assert_eq!(check_access(&user, &rules, obj, a), want);
                        checked += 1;
                    }
                }
            }
        }
        assert_eq!(checked, 1596 * 6 * 4);
    }

    #[test]
    fn bootstrap_rows_load() {
        let mut db = Database::new();
        db.create_schema(SYS_SCHEMA).unwrap();
        for op in bootstrap_ops() {
            crate::journal::apply(&mut db, &op).unwrap();
        }
        let admin = load_user(&db, ADMIN_USER).unwrap();
        assert!(admin.is_admin());
        assert!(matches!(load_user(&db, "nobody"), Err(Error::UnknownUser(_))));
        assert_eq!(
            load_rules(&db).unwrap(),
            vec![AclRule::new(ADMIN_ROLE, "*", Action::Admin)]
        );
    }
}
