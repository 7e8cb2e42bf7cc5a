use std::fs;
use std::path::{Path, PathBuf};

use crate::flipcore::FlipEnv;

use super::InstrumentError;

pub const SHIM_FILE: &str = "bfa_runtime.c";

/// C89 source of the runtime shim for the given variable names.
///
/// Compiled on its own it defines `__bfa_log` and `__bfa_flip_id`.
/// Instrumented translation units can pick up the prototypes with
/// `-DBFA_RUNTIME_DECLS_ONLY -include bfa_runtime.c`.
pub fn shim_source(env: &FlipEnv) -> String {
    format!(
        r#"/* Branch-flip runtime. Generated by bfa; do not edit. */
#ifndef BFA_RUNTIME_C
#define BFA_RUNTIME_C

int __bfa_log(long id);
long __bfa_flip_id(void);

#ifndef BFA_RUNTIME_DECLS_ONLY
#include <stdio.h>
#include <stdlib.h>

#define BFA_FLIP_VAR "{flip}"
#define BFA_COVERAGE_VAR "{cov}"

static int bfa_log_state = 0; /* 0 = unopened, 1 = open, 2 = disabled */
static FILE *bfa_log_file = 0;

/* Appends "<id>\n" to the coverage file, if one is configured. Always 1. */
int __bfa_log(long id)
{{
    if (bfa_log_state == 0) {{
        const char *path = getenv(BFA_COVERAGE_VAR);
        bfa_log_state = 2;
        if (path != 0 && path[0] != '\0') {{
            bfa_log_file = fopen(path, "a");
            if (bfa_log_file != 0) {{
                bfa_log_state = 1;
            }}
        }}
    }}
    if (bfa_log_state == 1) {{
        if (fprintf(bfa_log_file, "%ld\n", id) < 0 || fflush(bfa_log_file) != 0) {{
            bfa_log_state = 2;
        }}
    }}
    return 1;
}}

/* Selected branch id, parsed once. 0 when unset, empty, or invalid. */
long __bfa_flip_id(void)
{{
    static int parsed = 0;
    static long selected = 0;
    if (!parsed) {{
        const char *value = getenv(BFA_FLIP_VAR);
        parsed = 1;
        if (value != 0 && value[0] != '\0') {{
            char *end = 0;
            long id = strtol(value, &end, 10);
            if (end != value && *end == '\0' && id > 0) {{
                selected = id;
            }} else if (!(id == 0 && *end == '\0')) {{
                fprintf(stderr, "bfa: ignoring invalid %s=%s\n", BFA_FLIP_VAR, value);
            }}
        }}
    }}
    return selected;
}}

#endif /* BFA_RUNTIME_DECLS_ONLY */
#endif /* BFA_RUNTIME_C */
"#,
        flip = env.flip_var,
        cov = env.coverage_var
    )
}

/// Writes the shim into `dir` and returns its path.
pub fn emit_runtime_shim(dir: &Path, env: &FlipEnv) -> Result<PathBuf, InstrumentError> {
    env.validate().map_err(|e| InstrumentError::Config(e.to_string()))?;
    let path = dir.join(SHIM_FILE);
    fs::write(&path, shim_source(env)).map_err(|e| InstrumentError::io(&path, e))?;
    Ok(path)
}
