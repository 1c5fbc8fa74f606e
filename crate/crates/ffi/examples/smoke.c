#include <stdio.h>
#include <string.h>

#include "attestchain.h"

#define CHECK(call)                                                          \
  do {                                                                       \
    AcStatus st_ = (call);                                                   \
    if (st_ != AC_STATUS_OK) {                                               \
      fprintf(stderr, "%s failed: %s: %s\n", #call, ac_last_error_code(),    \
              ac_last_error_message());                                      \
      return 1;                                                              \
    }                                                                        \
  } while (0)

int main(int argc, char **argv) {
  if (argc != 2) {
    fprintf(stderr, "usage: %s <scratch-dir>\n", argv[0]);
    return 2;
  }
  char gw_dir[1024], wallet_path[1024];
  snprintf(gw_dir, sizeof gw_dir, "%s/gateway", argv[1]);
  snprintf(wallet_path, sizeof wallet_path, "%s/holder.wallet", argv[1]);

  AcGateway *gw = NULL;
  char *url = NULL;
  CHECK(ac_gateway_start(gw_dir, true, &gw));
  CHECK(ac_gateway_url(gw, &url));

  AcWallet *wallet = NULL;
  AcClient *client = NULL;
  char *doc = NULL, *req = NULL, *canon = NULL;
  CHECK(ac_wallet_create(wallet_path, "pw", 64, 1, &wallet));
  CHECK(ac_client_new(url, &client));
  CHECK(ac_client_register(client, wallet, AC_ROLE_HOLDER, &doc));
  CHECK(ac_client_login(client, wallet));
  CHECK(ac_client_submit_request(client, "DOC-C", "DE", NULL, &req));
  CHECK(ac_canonicalize("{\"z\": 1, \"a\": 2}", &canon));

  if (strstr(req, "\"state\":\"Open\"") == NULL || strcmp(canon, "{\"a\":2,\"z\":1}") != 0) {
    fprintf(stderr, "unexpected output: %s %s\n", req, canon);
    return 1;
  }
  char *unused = NULL;
  if (ac_client_finalize(client, wallet, "no-such-request", &unused) == AC_STATUS_OK ||
      strlen(ac_last_error_code()) == 0) {
    fprintf(stderr, "expected a recorded error\n");
    return 1;
  }
  printf("ok %s\n", ac_version());

  ac_string_free(canon);
  ac_string_free(req);
  ac_string_free(doc);
  ac_string_free(url);
  ac_client_free(client);
  ac_wallet_free(wallet);
  ac_gateway_free(gw);
  return 0;
}
